import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deeptrans import tensor as T
from deeptrans.errors import ContractError, DimensionError, NumericError
from deeptrans.tensor import Tape, Tensor


def fd_check(build, tensors, eps=1e-5, tol=1e-6):
    """Central finite differences vs autodiff for scalar loss `build()`."""
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = build()
    tape.backward(loss)
    for t in tensors:
        flat = t.data.reshape(-1)
        g = t.grad.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = build().item()
            flat[i] = orig - eps
            down = build().item()
            flat[i] = orig
            fd = (up - down) / (2 * eps)
            assert abs(fd - g[i]) <= tol * max(1.0, abs(fd), abs(g[i])), \
                f"fd {fd} vs autodiff {g[i]} at {i}"


def rt(shape, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = T.matmul(Tensor(np.eye(2)), a)
        assert np.array_equal(out.data, a.data)

    def test_hand_example(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradient_matches_finite_differences(self):
        a, b = rt((3, 4), 0), rt((4, 2), 1)
        fd_check(lambda: T.sum_all(T.matmul(a, b)), [a, b])

    @pytest.mark.parametrize("sa,sb", [((3, 4), (4,)), ((4,), (4, 3)), ((5,), (5,))])
    def test_gradient_vector_cases(self, sa, sb):
        a, b = rt(sa, 2), rt(sb, 3)
        fd_check(lambda: T.sum_all(T.matmul(a, b)), [a, b])


class TestElementwise:
    def test_sigmoid_of_zero(self):
        out = T.sigmoid(Tensor(np.zeros(5)))
        assert np.array_equal(out.data, np.full(5, 0.5))

    def test_tanh_of_zero(self):
        assert np.array_equal(T.tanh(Tensor(np.zeros(4))).data, np.zeros(4))

    def test_sigmoid_matches_logistic(self):
        x = np.linspace(-30, 30, 101)
        expected = 1.0 / (1.0 + np.exp(-x))
        assert np.allclose(T.sigmoid(Tensor(x)).data, expected, rtol=0, atol=1e-14)

    def test_binary_shape_mismatch(self):
        for op in (T.add, T.sub, T.mul):
            with pytest.raises(DimensionError):
                op(Tensor(np.zeros(3)), Tensor(np.zeros(4)))

    def test_scalar_broadcast(self):
        out = T.mul(Tensor(np.asarray(2.0)), Tensor([1.0, 2.0, 3.0]))
        assert out.data.tolist() == [2.0, 4.0, 6.0]

    def test_mul_gradient(self):
        a, b = rt((5,), 4), rt((5,), 5)
        fd_check(lambda: T.sum_all(T.mul(a, b)), [a, b])

    def test_unary_gradients(self):
        for fn in (T.sigmoid, T.tanh, lambda t: T.scale(t, -2.5)):
            a = rt((6,), 6)
            fd_check(lambda: T.sum_all(fn(a)), [a])

    def test_scalar_broadcast_gradient(self):
        s, v = rt((), 7), rt((4,), 8)
        fd_check(lambda: T.sum_all(T.mul(s, v)), [s, v])
        fd_check(lambda: T.sum_all(T.add(s, v)), [s, v])
        fd_check(lambda: T.sum_all(T.sub(v, s)), [s, v])


class TestSoftmax:
    def test_symmetric(self):
        assert T.softmax(Tensor([0.0, 0.0])).data.tolist() == [0.5, 0.5]

    def test_no_overflow(self):
        out = T.softmax(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(out)) and out[0] == pytest.approx(1.0)

    def test_empty_rejected(self):
        with pytest.raises(DimensionError):
            T.softmax(Tensor(np.zeros(0)))
        with pytest.raises(DimensionError):
            T.softmax(Tensor(np.zeros((2, 2))))

    def test_gradient_through_weighted_sum(self):
        v, w = rt((6,), 9), rt((6,), 10)
        fd_check(lambda: T.sum_all(T.mul(T.softmax(v), w)), [v])

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
    @settings(max_examples=60, deadline=None)
    def test_sums_to_one_and_positive(self, xs):
        out = T.softmax(Tensor(xs)).data
        assert abs(out.sum() - 1.0) <= 1e-12
        assert np.all(out > 0) and np.all(out <= 1.0)

    def test_log_softmax_consistent(self):
        v = rt((7,), 11)
        ls = T.log_softmax(v).data
        assert np.allclose(ls, np.log(T.softmax(v).data), atol=1e-12)
        fd_check(lambda: T.sum_all(T.mul(T.log_softmax(v), Tensor(np.arange(7.0)))), [v])


class TestStructureOps:
    def test_concat_vectors(self):
        out = T.concat(Tensor([1.0, 2.0]), Tensor([3.0]))
        assert out.data.tolist() == [1.0, 2.0, 3.0]

    def test_concat_shape_algebra(self):
        out = T.concat(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 5))), axis=1)
        assert out.shape == (2, 8)

    def test_concat_errors(self):
        with pytest.raises(DimensionError):
            T.concat(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3))), axis=1)
        with pytest.raises(DimensionError):
            T.concat(Tensor(np.zeros(3)), Tensor(np.zeros(3)), axis=2)

    def test_concat_gradient(self):
        a, b = rt((3,), 12), rt((2,), 13)
        fd_check(lambda: T.sum_all(T.mul(T.concat(a, b), Tensor([1., 2., 3., 4., 5.]))),
                 [a, b])

    def test_stack_narrow_tile_row_gradients(self):
        a, b = rt((4,), 14), rt((4,), 15)
        fd_check(lambda: T.sum_all(T.narrow(T.stack([a, b]), 1, 1, 2)), [a, b])
        v = rt((3,), 16)
        fd_check(lambda: T.sum_all(T.mul(T.tile_rows(v, 4),
                                         Tensor(np.arange(12.0).reshape(4, 3)))), [v])
        m = rt((5, 3), 17)
        fd_check(lambda: T.sum_all(T.mul(T.row(m, 2), Tensor([1.0, -1.0, 2.0]))), [m])

    def test_row_reuse_accumulates(self):
        m = rt((4, 3), 18)
        with Tape() as tape:
            loss = T.sum_all(T.add(T.row(m, 1), T.row(m, 1)))
        tape.backward(loss)
        assert np.allclose(m.grad.data[1], 2.0)
        assert np.allclose(m.grad.data[0], 0.0)


class TestLayerNorm:
    def test_constant_input_goes_to_zero(self):
        out = T.layer_norm(Tensor(np.full(6, 3.7)))
        assert np.max(np.abs(out.data)) < 1e-3

    def test_already_normalized(self):
        out = T.layer_norm(Tensor([1.0, -1.0]))
        assert np.allclose(out.data, [1.0, -1.0], atol=1e-6)

    def test_degenerate_dim_rejected(self):
        with pytest.raises(ContractError):
            T.layer_norm(Tensor([1.0]))

    def test_gradient_through_sigmoid(self):
        v = rt((6,), 19)
        fd_check(lambda: T.sum_all(T.sigmoid(T.layer_norm(v))), [v], tol=1e-4)

    def test_affine_matches_composition(self):
        v, g, b = rt((5,), 20), rt((5,), 21), rt((5,), 22)
        fused = T.layer_norm_affine(v, g, b)
        composed = T.add(T.mul(T.layer_norm(v), g), b)
        assert np.allclose(fused.data, composed.data, atol=1e-15)
        fd_check(lambda: T.sum_all(T.sigmoid(T.layer_norm_affine(v, g, b))),
                 [v, g, b], tol=1e-4)


class TestFusedArithmetic:
    def test_affine2_matches_composition(self):
        w1, x, w2, h = rt((4, 3), 23), rt((3,), 24), rt((4, 5), 25), rt((5,), 26)
        out = T.affine2(w1, x, w2, h)
        assert np.allclose(out.data, w1.data @ x.data + w2.data @ h.data, atol=1e-15)
        fd_check(lambda: T.sum_all(T.affine2(w1, x, w2, h)), [w1, x, w2, h])

    def test_muladd_and_gate_mix(self):
        a, b, c = rt((5,), 27), rt((5,), 28), rt((5,), 29)
        assert np.allclose(T.muladd(a, b, c).data, a.data + b.data * c.data)
        fd_check(lambda: T.sum_all(T.muladd(a, b, c)), [a, b, c])
        z = Tensor(1 / (1 + np.exp(-np.random.default_rng(0).standard_normal(5))),
                   requires_grad=True)
        fd_check(lambda: T.sum_all(T.gate_mix(z, a, c)), [z, a, c])
        expected = (1 - z.data) * a.data + z.data * c.data
        assert np.allclose(T.gate_mix(z, a, c).data, expected)

    def test_add_rowvec(self):
        m, v = rt((4, 3), 30), rt((3,), 31)
        assert np.allclose(T.add_rowvec(m, v).data, m.data + v.data)
        fd_check(lambda: T.sum_all(T.add_rowvec(m, v)), [m, v])


class TestBackwardContract:
    def test_linear_map_gradient_structure(self):
        w = rt((3, 4), 32)
        x = Tensor(np.arange(4.0))
        with Tape() as tape:
            loss = T.sum_all(T.matmul(w, x))
        tape.backward(loss)
        # d(sum(Wx))/dW = ones outer x
        assert np.allclose(w.grad.data, np.tile(x.data, (3, 1)))

    def test_non_scalar_loss_rejected(self):
        v = rt((3,), 33)
        with Tape() as tape:
            out = T.scale(v, 2.0)
        with pytest.raises(ContractError):
            tape.backward(out)

    def test_repeated_backward_accumulates(self):
        v = rt((3,), 34)
        with Tape() as tape:
            loss = T.sum_all(v)
        tape.backward(loss)
        once = v.grad.data.copy()
        tape.backward(loss)
        assert np.array_equal(v.grad.data, 2 * once)

    def test_constant_loss_leaves_grads_absent(self):
        w = rt((3, 3), 35)
        with Tape() as tape:
            loss = T.sum_all(Tensor(np.ones(2)))
        tape.backward(loss)
        assert w.grad is None  # parameter never entered the graph

    def test_disconnected_leaf_gets_zero_grad(self):
        v = rt((3,), 36)
        with Tape() as tape:
            _unused = T.scale(v, 2.0)
            loss = T.sum_all(Tensor(np.ones(2)))
        tape.backward(loss)
        assert v.grad is not None and np.array_equal(v.grad.data, np.zeros(3))

    def test_no_grad_for_plain_leaves(self):
        v = Tensor(np.ones(3))        # requires_grad False
        w = rt((3,), 37)
        with Tape() as tape:
            loss = T.sum_all(T.mul(v, w))
        tape.backward(loss)
        assert v.grad is None and w.grad is not None

    def test_nested_tape_rejected(self):
        with Tape():
            with pytest.raises(ContractError):
                with Tape():
                    pass


class TestNumericsAndDeterminism:
    def test_overflow_detected(self):
        big = Tensor(np.full((2, 2), 1e308))
        with np.errstate(over="ignore"), pytest.raises(NumericError, match="matmul"):
            T.matmul(big, big)

    def test_checks_can_be_disabled(self):
        big = Tensor(np.full((2, 2), 1e308))
        with np.errstate(over="ignore"), T.finite_checks(False):
            out = T.matmul(big, big)
        assert np.isinf(out.data).any()

    def test_forward_bit_reproducible(self):
        rng = np.random.default_rng(42)
        w, x = Tensor(rng.standard_normal((8, 8))), Tensor(rng.standard_normal(8))
        a = T.tanh(T.matmul(w, x)).data
        b = T.tanh(T.matmul(w, x)).data
        assert a.tobytes() == b.tobytes()

    def test_tensor_invariants(self):
        t = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert int(np.prod(t.shape)) == t.data.size
        v = rt((4,), 38)
        with Tape() as tape:
            loss = T.sum_all(v)
        tape.backward(loss)
        assert v.grad.shape == v.shape

    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=8),
           st.lists(st.floats(-100, 100), min_size=2, max_size=8))
    @settings(max_examples=40, deadline=None)
    def test_add_commutes_with_reference(self, xs, ys):
        n = min(len(xs), len(ys))
        a, b = Tensor(xs[:n]), Tensor(ys[:n])
        expected = [x + y for x, y in zip(xs[:n], ys[:n])]
        assert T.add(a, b).data.tolist() == expected
