"""GRU-family recurrent cells.

Three cell types share the same gated state update

    h_t = (1 - z_t) * h_prev + z_t * h_cand

and differ in how the candidate and gates are formed:

  * GRUCell      r, z from (x, h_prev); h_cand = tanh(Wxh x + r * (Whh h_prev))
  * TGRUCell     no input: r, z from h_prev only; h_cand = tanh(r * (Whh h_prev))
  * LGRUCell     GRU plus a gated linear path: h_cand gains + l * (Wx x),
                 with l = sigma(Wxl x + Whl h_prev)

Optional per-gate layer normalization rescales each gate's pre-activation
(zero mean, unit variance, eps inside the square root, then learned gain
and bias) before the sigmoid. Candidate-activation dropout multiplies
h_cand by an inverted-dropout mask drawn from the caller's rng; masks are
drawn fresh at every step so cells stay stateless.

Weight matrices carry no bias terms; when layer norm is enabled its bias
vector supplies the affine offset.

Each step records as a single fused node on the active tape: the forward
runs in plain numpy and the backward closure pushes gradients to every
weight, gain, bias and to (x, h_prev) in one pass. The finite-difference
harness validates these hand-written backwards end to end.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor

LN_EPS = 1e-6


def dropout_mask(d: int, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted-dropout mask: zeros with prob `rate`, survivors scaled 1/(1-rate)."""
    keep = 1.0 - rate
    return Tensor((rng.random(d) < keep).astype(np.float64) / keep)


def per_gate_layernorm(pre: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Gate pre-activation normalization: zero mean, unit variance, affine."""
    return T.layer_norm_affine(pre, gain, bias, LN_EPS)


class GateNorm:
    """Gain/bias pair for layer normalization of one gate pre-activation."""

    def __init__(self, d: int):
        if d < 2:
            raise ContractError("layer norm needs at least 2 features")
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.bias = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, pre: Tensor) -> Tensor:
        return per_gate_layernorm(pre, self.gain, self.bias)

    def named_params(self, prefix: str):
        yield f"{prefix}.gain", self.gain
        yield f"{prefix}.bias", self.bias


def _weight(rows: int, cols: int) -> Tensor:
    return Tensor(np.zeros((rows, cols)), requires_grad=True)


# ---------------------------------------------------------------------------
# fused step internals (raw numpy forward, hand-written backward)


def _ln_fwd(a: np.ndarray, gain: np.ndarray, bias: np.ndarray):
    """Returns (affine output, normalized vector, 1/std)."""
    inv_d = 1.0 / a.shape[0]
    centered = a - a.sum() * inv_d
    inv_std = 1.0 / math.sqrt(centered.dot(centered) * inv_d + LN_EPS)
    n = centered * inv_std
    return n * gain + bias, n, inv_std


def _ln_bwd(dp: np.ndarray, gain: np.ndarray, n: np.ndarray, inv_std: float):
    """Returns (d pre-activation, d gain, d bias)."""
    inv_d = 1.0 / n.shape[0]
    dn = dp * gain
    proj = np.dot(dn, n) * inv_d
    return inv_std * (dn - dn.sum() * inv_d - n * proj), dp * n, dp


def _gate(a: np.ndarray, norm: GateNorm | None):
    if norm is None:
        p, n, inv_std = a, None, 0.0
    else:
        p, n, inv_std = _ln_fwd(a, norm.gain.data, norm.bias.data)
    # 0.5*(1 + tanh(x/2)) equals the logistic function without overflow
    return 0.5 * np.tanh(0.5 * p) + 0.5, n, inv_std


def _mask_or_none(d: int, rate: float, train: bool, rng) -> np.ndarray | None:
    if not train or rate <= 0.0:
        return None
    keep = 1.0 - rate
    return (rng.random(d) < keep).astype(np.float64) / keep


def _check_vec(t: Tensor, d: int, what: str) -> np.ndarray:
    if t.data.shape != (d,):
        raise DimensionError(f"{what}: expected shape ({d},), got {t.shape}")
    return t.data


# ---------------------------------------------------------------------------
# cells


class GRUCell:
    """Conventional gated recurrent unit with reset and update gates."""

    kind = "gru"

    def __init__(self, d_x: int, d: int, layernorm: bool = False,
                 dropout: float = 0.0, norm_candidate: bool = False):
        if d_x < 1 or d < 1:
            raise ContractError("cell dims must be positive")
        self.d_x, self.d = d_x, d
        self.dropout = dropout
        self.w_xr, self.w_hr = _weight(d, d_x), _weight(d, d)
        self.w_xz, self.w_hz = _weight(d, d_x), _weight(d, d)
        self.w_xh, self.w_hh = _weight(d, d_x), _weight(d, d)
        self.ln_r = GateNorm(d) if layernorm else None
        self.ln_z = GateNorm(d) if layernorm else None
        self.ln_c = GateNorm(d) if (layernorm and norm_candidate) else None

    def step(self, x: Tensor, h_prev: Tensor, train: bool = False,
             rng: np.random.Generator | None = None) -> Tensor:
        return _gated_step(self, x, h_prev, train, rng, linear_path=False)

    def named_params(self, prefix: str):
        for name in ("w_xr", "w_hr", "w_xz", "w_hz", "w_xh", "w_hh"):
            yield f"{prefix}.{name}", getattr(self, name)
        for ln, tag in ((self.ln_r, "ln_r"), (self.ln_z, "ln_z"), (self.ln_c, "ln_c")):
            if ln is not None:
                yield from ln.named_params(f"{prefix}.{tag}")


class LGRUCell:
    """GRU with a gated linear transformation of the input added to the candidate.

    The candidate may leave [-1, 1] because of the additive linear term.
    """

    kind = "lgru"

    def __init__(self, d_x: int, d: int, layernorm: bool = False,
                 dropout: float = 0.0, norm_candidate: bool = False):
        if d_x < 1 or d < 1:
            raise ContractError("cell dims must be positive")
        self.d_x, self.d = d_x, d
        self.dropout = dropout
        self.w_xr, self.w_hr = _weight(d, d_x), _weight(d, d)
        self.w_xz, self.w_hz = _weight(d, d_x), _weight(d, d)
        self.w_xh, self.w_hh = _weight(d, d_x), _weight(d, d)
        self.w_x = _weight(d, d_x)
        self.w_xl, self.w_hl = _weight(d, d_x), _weight(d, d)
        self.ln_r = GateNorm(d) if layernorm else None
        self.ln_z = GateNorm(d) if layernorm else None
        self.ln_l = GateNorm(d) if layernorm else None
        self.ln_c = GateNorm(d) if (layernorm and norm_candidate) else None

    def step(self, x: Tensor, h_prev: Tensor, train: bool = False,
             rng: np.random.Generator | None = None) -> Tensor:
        return _gated_step(self, x, h_prev, train, rng, linear_path=True)

    def named_params(self, prefix: str):
        for name in ("w_xr", "w_hr", "w_xz", "w_hz", "w_xh", "w_hh", "w_x", "w_xl", "w_hl"):
            yield f"{prefix}.{name}", getattr(self, name)
        for ln, tag in ((self.ln_r, "ln_r"), (self.ln_z, "ln_z"),
                        (self.ln_l, "ln_l"), (self.ln_c, "ln_c")):
            if ln is not None:
                yield from ln.named_params(f"{prefix}.{tag}")


def _gated_step(cell, x: Tensor, h_prev: Tensor, train: bool, rng,
                linear_path: bool) -> Tensor:
    """Shared fused step for GRUCell (linear_path=False) and LGRUCell."""
    xd = _check_vec(x, cell.d_x, f"{cell.kind} input")
    hd = _check_vec(h_prev, cell.d, f"{cell.kind} state")
    w_xr, w_hr = cell.w_xr.data, cell.w_hr.data
    w_xz, w_hz = cell.w_xz.data, cell.w_hz.data
    w_xh, w_hh = cell.w_xh.data, cell.w_hh.data

    r, n_r, is_r = _gate(w_xr @ xd + w_hr @ hd, cell.ln_r)
    z, n_z, is_z = _gate(w_xz @ xd + w_hz @ hd, cell.ln_z)
    u = w_hh @ hd
    c_pre = w_xh @ xd + r * u
    if cell.ln_c is not None:
        c_aff, n_c, is_c = _ln_fwd(c_pre, cell.ln_c.gain.data, cell.ln_c.bias.data)
        tanh_c = np.tanh(c_aff)
    else:
        n_c, is_c = None, 0.0
        tanh_c = np.tanh(c_pre)
    if linear_path:
        w_x, w_xl, w_hl = cell.w_x.data, cell.w_xl.data, cell.w_hl.data
        lgate, n_l, is_l = _gate(w_xl @ xd + w_hl @ hd, cell.ln_l)
        lin = w_x @ xd
        cand = tanh_c + lgate * lin
    else:
        cand = tanh_c
    mask = _mask_or_none(cell.d, cell.dropout, train, rng)
    if mask is not None:
        cand = cand * mask
    h_new = (1.0 - z) * hd + z * cand

    if T.active_tape() is None:
        T.check_finite(h_new, f"{cell.kind}_step")
        return Tensor(h_new)

    inputs = [x, h_prev, cell.w_xr, cell.w_hr, cell.w_xz, cell.w_hz,
              cell.w_xh, cell.w_hh]
    if linear_path:
        inputs += [cell.w_x, cell.w_xl, cell.w_hl]
    for ln in (cell.ln_r, cell.ln_z, cell.ln_l if linear_path else None, cell.ln_c):
        if ln is not None:
            inputs += [ln.gain, ln.bias]

    def backward(g):
        dx = np.zeros_like(xd)
        dh = g * (1.0 - z)
        dz = g * (cand - hd)
        dcand = g * z
        if mask is not None:
            dcand = dcand * mask
        grads = {}
        if linear_path:
            dl = dcand * lin
            dlin = dcand * lgate
            grads["w_x"] = dlin[:, None] * xd
            dx += w_x.T @ dlin
            dp_l = dl * lgate * (1.0 - lgate)
            if cell.ln_l is not None:
                da_l, grads["ln_l.gain"], grads["ln_l.bias"] = _ln_bwd(
                    dp_l, cell.ln_l.gain.data, n_l, is_l)
            else:
                da_l = dp_l
            grads["w_xl"] = da_l[:, None] * xd
            grads["w_hl"] = da_l[:, None] * hd
            dx += w_xl.T @ da_l
            dh += w_hl.T @ da_l
        dtanh = dcand * (1.0 - tanh_c * tanh_c)
        if cell.ln_c is not None:
            dc_pre, grads["ln_c.gain"], grads["ln_c.bias"] = _ln_bwd(
                dtanh, cell.ln_c.gain.data, n_c, is_c)
        else:
            dc_pre = dtanh
        dr = dc_pre * u
        du = dc_pre * r
        grads["w_xh"] = dc_pre[:, None] * xd
        grads["w_hh"] = du[:, None] * hd
        dx += w_xh.T @ dc_pre
        dh += w_hh.T @ du
        for gate_val, dgate, ln, a_tag in ((r, dr, cell.ln_r, "r"), (z, dz, cell.ln_z, "z")):
            dp = dgate * gate_val * (1.0 - gate_val)
            if ln is not None:
                da, grads[f"ln_{a_tag}.gain"], grads[f"ln_{a_tag}.bias"] = _ln_bwd(
                    dp, ln.gain.data, n_r if a_tag == "r" else n_z,
                    is_r if a_tag == "r" else is_z)
            else:
                da = dp
            grads[f"w_x{a_tag}"] = da[:, None] * xd
            grads[f"w_h{a_tag}"] = da[:, None] * hd
            dx += (w_xr if a_tag == "r" else w_xz).T @ da
            dh += (w_hr if a_tag == "r" else w_hz).T @ da
        out = [dx, dh, grads["w_xr"], grads["w_hr"], grads["w_xz"], grads["w_hz"],
               grads["w_xh"], grads["w_hh"]]
        if linear_path:
            out += [grads["w_x"], grads["w_xl"], grads["w_hl"]]
        for tag, ln in (("r", cell.ln_r), ("z", cell.ln_z),
                        ("l", cell.ln_l if linear_path else None), ("c", cell.ln_c)):
            if ln is not None:
                out += [grads[f"ln_{tag}.gain"], grads[f"ln_{tag}.bias"]]
        return tuple(out)

    return T.fused_result(h_new, tuple(inputs), backward, f"{cell.kind}_step")


class TGRUCell:
    """Transition GRU: a GRU with only the state as input."""

    kind = "tgru"

    def __init__(self, d: int, layernorm: bool = False,
                 dropout: float = 0.0, norm_candidate: bool = False):
        if d < 1:
            raise ContractError("cell dims must be positive")
        self.d = d
        self.dropout = dropout
        self.w_hr = _weight(d, d)
        self.w_hz = _weight(d, d)
        self.w_hh = _weight(d, d)
        self.ln_r = GateNorm(d) if layernorm else None
        self.ln_z = GateNorm(d) if layernorm else None
        self.ln_c = GateNorm(d) if (layernorm and norm_candidate) else None

    def step(self, h_prev: Tensor, train: bool = False,
             rng: np.random.Generator | None = None) -> Tensor:
        cell = self
        hd = _check_vec(h_prev, cell.d, "tgru state")
        w_hr, w_hz, w_hh = cell.w_hr.data, cell.w_hz.data, cell.w_hh.data
        r, n_r, is_r = _gate(w_hr @ hd, cell.ln_r)
        z, n_z, is_z = _gate(w_hz @ hd, cell.ln_z)
        u = w_hh @ hd
        c_pre = r * u
        if cell.ln_c is not None:
            c_aff, n_c, is_c = _ln_fwd(c_pre, cell.ln_c.gain.data, cell.ln_c.bias.data)
            tanh_c = np.tanh(c_aff)
        else:
            n_c, is_c = None, 0.0
            tanh_c = np.tanh(c_pre)
        cand = tanh_c
        mask = _mask_or_none(cell.d, cell.dropout, train, rng)
        if mask is not None:
            cand = cand * mask
        h_new = (1.0 - z) * hd + z * cand

        if T.active_tape() is None:
            T.check_finite(h_new, "tgru_step")
            return Tensor(h_new)

        inputs = [h_prev, cell.w_hr, cell.w_hz, cell.w_hh]
        for ln in (cell.ln_r, cell.ln_z, cell.ln_c):
            if ln is not None:
                inputs += [ln.gain, ln.bias]

        def backward(g):
            dh = g * (1.0 - z)
            dz = g * (cand - hd)
            dcand = g * z
            if mask is not None:
                dcand = dcand * mask
            grads = {}
            dtanh = dcand * (1.0 - tanh_c * tanh_c)
            if cell.ln_c is not None:
                dc_pre, grads["ln_c.gain"], grads["ln_c.bias"] = _ln_bwd(
                    dtanh, cell.ln_c.gain.data, n_c, is_c)
            else:
                dc_pre = dtanh
            dr = dc_pre * u
            du = dc_pre * r
            grads["w_hh"] = du[:, None] * hd
            dh += w_hh.T @ du
            dp_r = dr * r * (1.0 - r)
            dp_z = dz * z * (1.0 - z)
            if cell.ln_r is not None:
                da_r, grads["ln_r.gain"], grads["ln_r.bias"] = _ln_bwd(
                    dp_r, cell.ln_r.gain.data, n_r, is_r)
                da_z, grads["ln_z.gain"], grads["ln_z.bias"] = _ln_bwd(
                    dp_z, cell.ln_z.gain.data, n_z, is_z)
            else:
                da_r, da_z = dp_r, dp_z
            grads["w_hr"] = da_r[:, None] * hd
            grads["w_hz"] = da_z[:, None] * hd
            dh += w_hr.T @ da_r
            dh += w_hz.T @ da_z
            out = [dh, grads["w_hr"], grads["w_hz"], grads["w_hh"]]
            for tag, ln in (("r", cell.ln_r), ("z", cell.ln_z), ("c", cell.ln_c)):
                if ln is not None:
                    out += [grads[f"ln_{tag}.gain"], grads[f"ln_{tag}.bias"]]
            return tuple(out)

        return T.fused_result(h_new, tuple(inputs), backward, "tgru_step")

    def named_params(self, prefix: str):
        for name in ("w_hr", "w_hz", "w_hh"):
            yield f"{prefix}.{name}", getattr(self, name)
        for ln, tag in ((self.ln_r, "ln_r"), (self.ln_z, "ln_z"), (self.ln_c, "ln_c")):
            if ln is not None:
                yield from ln.named_params(f"{prefix}.{tag}")


def make_cell(kind: str, d_x: int, d: int, **opts):
    if kind == "gru":
        return GRUCell(d_x, d, **opts)
    if kind == "tgru":
        return TGRUCell(d, **opts)
    if kind == "lgru":
        return LGRUCell(d_x, d, **opts)
    raise ContractError(f"unknown cell kind {kind!r}")


def count_params(kind: str, d_x: int, d: int, layernorm: bool = False) -> int:
    """Exact parameter count by enumerating a cell's tensors."""
    cell = make_cell(kind, d_x, d, layernorm=layernorm)
    return sum(t.data.size for _, t in cell.named_params("c"))
