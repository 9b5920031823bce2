import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference as ref
from deeptrans import tensor as T
from deeptrans.cells import GRUCell, LGRUCell, TGRUCell, count_params, per_gate_layernorm
from deeptrans.errors import ContractError, DimensionError
from deeptrans.tensor import Tape, Tensor


def fill(cell, seed, scale=0.5):
    rng = np.random.default_rng(seed)
    for name, t in cell.named_params("c"):
        if name.endswith("gain"):
            t.data = rng.uniform(0.5, 1.5, t.data.shape)
        elif name.endswith("bias"):
            t.data = rng.uniform(-0.2, 0.2, t.data.shape)
        else:
            t.data = rng.uniform(-scale, scale, t.data.shape)
    return cell


def as_ref_params(cell):
    return {name.split(".")[-1]: t.data.tolist()
            for name, t in cell.named_params("c") if t.data.ndim == 2}


def ln_pair(norm):
    if norm is None:
        return None
    return (norm.gain.data.tolist(), norm.bias.data.tolist())


class TestTrivialValues:
    def test_gru_zero_params_halves_state(self):
        cell = GRUCell(3, 4)
        h = Tensor([1.0, -2.0, 3.0, 0.5])
        out = cell.step(Tensor(np.zeros(3)), h)
        assert np.array_equal(out.data, 0.5 * h.data)

    def test_gru_zero_everything(self):
        cell = GRUCell(3, 4)
        out = cell.step(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
        assert np.array_equal(out.data, np.zeros(4))

    def test_tgru_zero_params_halves_state(self):
        cell = TGRUCell(4)
        h = Tensor([1.0, -2.0, 3.0, 0.5])
        assert np.array_equal(cell.step(h).data, 0.5 * h.data)

    def test_lgru_zero_params_halves_state(self):
        cell = LGRUCell(3, 4)
        h = Tensor([1.0, -2.0, 3.0, 0.5])
        out = cell.step(Tensor(np.zeros(3)), h)
        assert np.array_equal(out.data, 0.5 * h.data)

    def test_shape_mismatch(self):
        cell = GRUCell(3, 4)
        with pytest.raises(DimensionError):
            cell.step(Tensor(np.zeros(5)), Tensor(np.zeros(4)))
        with pytest.raises(DimensionError):
            cell.step(Tensor(np.zeros(3)), Tensor(np.zeros(5)))


class TestScalarLoopEquivalence:
    @pytest.mark.parametrize("layernorm", [False, True])
    @pytest.mark.parametrize("seed", range(20))
    def test_gru(self, seed, layernorm):
        cell = fill(GRUCell(4, 4, layernorm=layernorm), seed)
        rng = np.random.default_rng(100 + seed)
        x, h = rng.standard_normal(4), rng.standard_normal(4)
        got = cell.step(Tensor(x), Tensor(h)).data
        want = ref.gru_step(as_ref_params(cell), x.tolist(), h.tolist(),
                            ln_pair(cell.ln_r), ln_pair(cell.ln_z))
        assert np.allclose(got, want, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("layernorm", [False, True])
    @pytest.mark.parametrize("seed", range(20))
    def test_tgru(self, seed, layernorm):
        cell = fill(TGRUCell(5, layernorm=layernorm), seed)
        h = np.random.default_rng(200 + seed).standard_normal(5)
        got = cell.step(Tensor(h)).data
        want = ref.tgru_step(as_ref_params(cell), h.tolist(),
                             ln_pair(cell.ln_r), ln_pair(cell.ln_z))
        assert np.allclose(got, want, atol=1e-12, rtol=0)

    @pytest.mark.parametrize("layernorm", [False, True])
    @pytest.mark.parametrize("seed", range(20))
    def test_lgru(self, seed, layernorm):
        cell = fill(LGRUCell(3, 4, layernorm=layernorm), seed)
        rng = np.random.default_rng(300 + seed)
        x, h = rng.standard_normal(3), rng.standard_normal(4)
        got = cell.step(Tensor(x), Tensor(h)).data
        want = ref.lgru_step(as_ref_params(cell), x.tolist(), h.tolist(),
                             ln_pair(cell.ln_r), ln_pair(cell.ln_z), ln_pair(cell.ln_l))
        assert np.allclose(got, want, atol=1e-12, rtol=0)


def share_common(src, dst):
    for name, t in dict(src.named_params("c")).items():
        own = dict(dst.named_params("c"))
        if name in own:
            own[name].data = t.data.copy()


class TestReductionChain:
    @pytest.mark.parametrize("layernorm", [False, True])
    @pytest.mark.parametrize("seed", range(10))
    def test_lgru_with_zero_linear_equals_gru(self, seed, layernorm):
        lgru = fill(LGRUCell(4, 4, layernorm=layernorm), seed)
        lgru.w_x.data = np.zeros_like(lgru.w_x.data)
        gru = GRUCell(4, 4, layernorm=layernorm)
        share_common(lgru, gru)
        rng = np.random.default_rng(400 + seed)
        x, h = Tensor(rng.standard_normal(4)), Tensor(rng.standard_normal(4))
        a = lgru.step(x, h).data
        b = gru.step(x, h).data
        assert np.max(np.abs(a - b)) <= 1e-15

    @pytest.mark.parametrize("layernorm", [False, True])
    @pytest.mark.parametrize("seed", range(10))
    def test_gru_with_zero_input_equals_tgru(self, seed, layernorm):
        tgru = fill(TGRUCell(4, layernorm=layernorm), seed)
        gru = GRUCell(4, 4, layernorm=layernorm)   # all w_x* stay zero
        share_common(tgru, gru)
        h = Tensor(np.random.default_rng(500 + seed).standard_normal(4))
        a = gru.step(Tensor(np.zeros(4)), h).data
        b = tgru.step(h).data
        assert np.max(np.abs(a - b)) <= 1e-15


class TestGateNorm:
    def test_constant_input(self):
        out = per_gate_layernorm(Tensor(np.full(4, 2.0)),
                                 Tensor(np.ones(4)), Tensor(np.zeros(4)))
        assert np.max(np.abs(out.data)) < 1e-3

    def test_already_normalized(self):
        out = per_gate_layernorm(Tensor([1.0, -1.0]),
                                 Tensor(np.ones(2)), Tensor(np.zeros(2)))
        assert np.allclose(out.data, [1.0, -1.0], atol=1e-6)

    def test_degenerate_rejected(self):
        with pytest.raises(ContractError):
            per_gate_layernorm(Tensor([1.0]), Tensor([1.0]), Tensor([0.0]))

    def test_gradient_through_sigmoid(self):
        rng = np.random.default_rng(0)
        v = Tensor(rng.standard_normal(6), requires_grad=True)
        g = Tensor(rng.uniform(0.5, 1.5, 6), requires_grad=True)
        b = Tensor(rng.uniform(-0.3, 0.3, 6), requires_grad=True)

        def build():
            return T.sum_all(T.sigmoid(per_gate_layernorm(v, g, b)))

        from test_tensor import fd_check
        fd_check(build, [v, g, b], eps=1e-5, tol=1e-4)


class TestCountParams:
    def test_paper_counts(self):
        assert count_params("gru", 4, 4) == 96
        assert count_params("tgru", 4, 4) == 48
        assert count_params("lgru", 4, 4) == 144

    def test_formula(self):
        for d_x, d in [(3, 5), (8, 8), (2, 7)]:
            assert count_params("gru", d_x, d) == 3 * d_x * d + 3 * d * d
            assert count_params("tgru", d_x, d) == 3 * d * d
            assert count_params("lgru", d_x, d) == 5 * d_x * d + 4 * d * d

    def test_layernorm_counts(self):
        d = 6
        assert count_params("gru", 3, d, layernorm=True) == count_params("gru", 3, d) + 4 * d
        assert count_params("tgru", 3, d, layernorm=True) == count_params("tgru", 3, d) + 4 * d
        assert count_params("lgru", 3, d, layernorm=True) == count_params("lgru", 3, d) + 6 * d


class TestGradients:
    @pytest.mark.parametrize("layernorm", [False, True])
    def test_gru_all_matrices(self, layernorm):
        cell = fill(GRUCell(4, 4, layernorm=layernorm), 7)
        rng = np.random.default_rng(8)
        x = Tensor(rng.standard_normal(4), requires_grad=True)
        h = Tensor(rng.standard_normal(4), requires_grad=True)
        w = Tensor(rng.standard_normal(4))
        tensors = [t for _, t in cell.named_params("c")] + [x, h]

        def build():
            return T.sum_all(T.mul(cell.step(x, h), w))

        from test_tensor import fd_check
        fd_check(build, tensors, eps=1e-5, tol=1e-4)

    def test_tgru_gradcheck(self):
        cell = fill(TGRUCell(5, layernorm=True), 9)
        h = Tensor(np.random.default_rng(10).standard_normal(5), requires_grad=True)
        w = Tensor(np.random.default_rng(11).standard_normal(5))

        def build():
            return T.sum_all(T.mul(cell.step(h), w))

        from test_tensor import fd_check
        fd_check(build, [t for _, t in cell.named_params("c")] + [h], tol=1e-4)

    @pytest.mark.parametrize("layernorm", [False, True])
    def test_lgru_all_nine_matrices(self, layernorm):
        cell = fill(LGRUCell(4, 4, layernorm=layernorm), 12)
        rng = np.random.default_rng(13)
        x = Tensor(rng.standard_normal(4), requires_grad=True)
        h = Tensor(rng.standard_normal(4), requires_grad=True)
        w = Tensor(rng.standard_normal(4))

        def build():
            return T.sum_all(T.mul(cell.step(x, h), w))

        from test_tensor import fd_check
        fd_check(build, [t for _, t in cell.named_params("c")] + [x, h], tol=1e-4)

    def test_dropout_gradient(self):
        cell = fill(LGRUCell(3, 4, dropout=0.5), 14)
        rng = np.random.default_rng(15)
        x = Tensor(rng.standard_normal(3), requires_grad=True)
        h = Tensor(rng.standard_normal(4), requires_grad=True)

        def build():
            # fixed mask per evaluation so FD sees a deterministic function
            return T.sum_all(cell.step(x, h, train=True,
                                       rng=np.random.default_rng(99)))

        from test_tensor import fd_check
        fd_check(build, [t for _, t in cell.named_params("c")] + [x, h], tol=1e-4)


class TestProperties:
    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_gate_range_and_contraction(self, seed):
        cell = fill(GRUCell(4, 4), seed % 1000)
        rng = np.random.default_rng(seed)
        h = rng.uniform(-3, 3, 4)
        out = cell.step(Tensor(rng.uniform(-3, 3, 4)), Tensor(h)).data
        # GRU state is a convex mix of h_prev and a tanh candidate
        assert np.max(np.abs(out)) <= max(np.max(np.abs(h)), 1.0) + 1e-15

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_tgru_contraction(self, seed):
        cell = fill(TGRUCell(5), seed % 1000)
        h = np.random.default_rng(seed).uniform(-4, 4, 5)
        out = cell.step(Tensor(h)).data
        assert np.max(np.abs(out)) <= max(np.max(np.abs(h)), 1.0) + 1e-15

    def test_train_eval_identical_without_dropout(self):
        for make in (lambda: GRUCell(3, 4, layernorm=True),
                     lambda: LGRUCell(3, 4),
                     lambda: TGRUCell(4, layernorm=True)):
            cell = fill(make(), 77)
            rng = np.random.default_rng(5)
            args = ([Tensor(rng.standard_normal(3))]
                    if cell.kind != "tgru" else [])
            h = Tensor(rng.standard_normal(4))
            a = cell.step(*args, h, train=False).data
            b = cell.step(*args, h, train=True, rng=np.random.default_rng(0)).data
            assert np.array_equal(a, b)

    def test_dropout_masks_fresh_per_step(self):
        cell = fill(GRUCell(3, 4, dropout=0.5), 21)
        rng = np.random.default_rng(6)
        x, h = Tensor(rng.standard_normal(3)), Tensor(rng.standard_normal(4))
        step_rng = np.random.default_rng(7)
        a = cell.step(x, h, train=True, rng=step_rng).data
        b = cell.step(x, h, train=True, rng=step_rng).data
        assert not np.array_equal(a, b)
