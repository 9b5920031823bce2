"""Dense float64 tensors with taped reverse-mode automatic differentiation.

Everything in this library is built from a small set of differentiable
operations on immutable `Tensor` values. A `Tape` records the operations
executed inside its `with` block as a topologically ordered list of
records (a Wengert list); `Tape.backward(loss)` replays the list in
reverse and accumulates gradients into the `requires_grad` leaves.

Design notes:
  * float64 only. Gradient checks against central finite differences are
    the primary correctness instrument and need the precision.
  * no implicit broadcasting, with the single exception of scalar
    (rank-0) operands in add/sub/mul. Shape mismatches raise
    DimensionError rather than broadcasting silently.
  * tensors are treated as immutable once created; a tape must stay on
    the thread that recorded it.
  * every op checks its output for NaN/Inf (cheap reduction-based test)
    and raises NumericError on failure; `finite_checks(False)` disables
    the per-op check for throughput experiments.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DimensionError, NumericError

__all__ = [
    "Tensor",
    "Tape",
    "active_tape",
    "finite_checks",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "sigmoid",
    "tanh",
    "softmax",
    "log_softmax",
    "concat",
    "stack",
    "narrow",
    "tile_rows",
    "row",
    "sum_all",
    "layer_norm",
    "layer_norm_affine",
    "affine2",
    "muladd",
    "gate_mix",
    "add_rowvec",
    "fused_result",
    "check_finite",
]


class Tensor:
    """A dense float64 array plus autodiff bookkeeping.

    `data` is always a C-contiguous float64 ndarray. `grad`, when
    populated by a backward pass, is a Tensor of identical shape.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Tensor | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


# The tape currently recording, or None (pure evaluation, no graph).
_ACTIVE: "Tape | None" = None

_CHECK_FINITE = True


@contextmanager
def finite_checks(enabled: bool):
    """Temporarily enable/disable per-op non-finite detection."""
    global _CHECK_FINITE
    prev = _CHECK_FINITE
    _CHECK_FINITE = enabled
    try:
        yield
    finally:
        _CHECK_FINITE = prev


def active_tape() -> "Tape | None":
    return _ACTIVE


class Tape:
    """Topologically ordered record of ops for one forward pass.

    Each record is (backward_fn, out_node, in_nodes). Node ids index
    `self.nodes`; leaves are nodes that no record produced. Use as a
    context manager to capture ops::

        with Tape() as tape:
            loss = ...
        tape.backward(loss)

    Repeated backward calls without `zero_grad` on the leaves accumulate
    gradients, which is the documented contract.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.records: list[tuple] = []
        self._index: dict[int, int] = {}
        self._produced: list[bool] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE
        if _ACTIVE is not None:
            raise ContractError("a tape is already recording on this thread")
        _ACTIVE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE
        _ACTIVE = None

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> None:
        index = self._index
        nodes = self.nodes
        produced = self._produced
        in_ids = []
        for t in inputs:
            i = index.get(id(t))
            if i is None:
                i = len(nodes)
                nodes.append(t)
                produced.append(False)
                index[id(t)] = i
            in_ids.append(i)
        out_id = len(nodes)
        nodes.append(out)
        produced.append(True)
        index[id(out)] = out_id
        self.records.append((backward_fn, out_id, tuple(in_ids)))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every requires_grad leaf."""
        if loss.data.ndim != 0:
            raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
        idx = self._index.get(id(loss))
        if idx is None and loss.requires_grad:
            raise ContractError("loss was not computed on this tape")
        # idx None: constant loss; every leaf ends up with a zero gradient
        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        if idx is not None:
            grads[idx] = np.ones((), dtype=np.float64)
        for backward_fn, out_id, in_ids in reversed(self.records):
            g = grads[out_id]
            if g is None:
                continue
            for in_id, gi in zip(in_ids, backward_fn(g)):
                if gi is None:
                    continue
                if grads[in_id] is None:
                    grads[in_id] = gi
                else:
                    # out-of-place: closures may hand back aliased arrays
                    grads[in_id] = grads[in_id] + gi
        produced = self._produced
        for i, t in enumerate(self.nodes):
            if t.requires_grad and not produced[i]:
                g = grads[i]
                if g is None:
                    g = np.zeros_like(t.data)
                if not math.isfinite(g.sum()):
                    raise NumericError("backward produced non-finite gradients")
                if t.grad is None:
                    t.grad = Tensor(np.array(g, dtype=np.float64))
                else:
                    t.grad.data += g


def _wrap(arr: np.ndarray) -> Tensor:
    # fast construction for op outputs (always fresh float64 ndarrays)
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.requires_grad = False
    t.grad = None
    return t


def _result1(arr: np.ndarray, a: Tensor, backward_fn, op: str) -> Tensor:
    if _CHECK_FINITE and not math.isfinite(arr.sum()):
        _report_nonfinite(arr, op)
    out = _wrap(arr)
    tape = _ACTIVE
    if tape is not None and a.requires_grad:
        out.requires_grad = True
        tape.record(out, (a,), backward_fn)
    return out


def _result2(arr: np.ndarray, a: Tensor, b: Tensor, backward_fn, op: str) -> Tensor:
    if _CHECK_FINITE and not math.isfinite(arr.sum()):
        _report_nonfinite(arr, op)
    out = _wrap(arr)
    tape = _ACTIVE
    if tape is not None and (a.requires_grad or b.requires_grad):
        out.requires_grad = True
        tape.record(out, (a, b), backward_fn)
    return out


def _result(arr: np.ndarray, inputs: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    if _CHECK_FINITE and not math.isfinite(arr.sum()):
        _report_nonfinite(arr, op)
    out = _wrap(arr)
    tape = _ACTIVE
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward_fn)
    return out


def fused_result(arr: np.ndarray, inputs: tuple, backward_fn, op: str) -> Tensor:
    """Register an externally computed (fused) op on the active tape.

    The caller supplies the forward result and a backward closure mapping
    the output gradient to one gradient (or None) per input, in order.
    """
    return _result(arr, inputs, backward_fn, op)


def check_finite(arr: np.ndarray, op: str) -> None:
    """Raise NumericError if arr holds NaN/Inf (honors the finite_checks flag)."""
    if _CHECK_FINITE and not math.isfinite(arr.sum()):
        _report_nonfinite(arr, op)


def _report_nonfinite(arr: np.ndarray, op: str):
    # reached when arr.sum() is non-finite, which happens iff the array
    # holds NaN/Inf (inf-inf -> NaN); one reduction beats isfinite().all()
    bad = int(np.size(arr) - np.isfinite(arr).sum())
    raise NumericError(f"{op} produced {bad} non-finite value(s)")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product, accepting 1-D operands as vectors (numpy rules)."""
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0 or ad.ndim > 2 or bd.ndim > 2:
        raise DimensionError(f"matmul needs 1-D/2-D operands, got {a.shape} and {b.shape}")
    if ad.shape[-1] != (bd.shape[0] if bd.ndim > 0 else -1):
        raise DimensionError(f"matmul inner extents disagree: {a.shape} vs {b.shape}")
    out = np.matmul(ad, bd)

    if ad.ndim == 2 and bd.ndim == 1:      # matrix @ vector
        def backward(g: np.ndarray):
            return g[:, None] * bd, ad.T @ g
    elif ad.ndim == 1 and bd.ndim == 2:    # vector @ matrix
        def backward(g: np.ndarray):
            return bd @ g, ad[:, None] * g
    elif ad.ndim == 1:                     # dot product
        def backward(g: np.ndarray):
            return g * bd, g * ad
    else:                                  # matrix @ matrix
        def backward(g: np.ndarray):
            return g @ bd.T, ad.T @ g

    return _result2(out, a, b, backward, "matmul")


# ---------------------------------------------------------------------------
# elementwise


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    # rank-0 scalars may combine with any shape; everything else must match.
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _reduce_for(t: Tensor, g: np.ndarray) -> np.ndarray:
    return g.sum() if t.ndim == 0 and g.ndim != 0 else g


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "add")

    def backward(g):
        return _reduce_for(a, g), _reduce_for(b, g)

    return _result2(a.data + b.data, a, b, backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "sub")

    def backward(g):
        return _reduce_for(a, g), _reduce_for(b, -g)

    return _result2(a.data - b.data, a, b, backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _reduce_for(a, g * bd), _reduce_for(b, g * ad)

    return _result2(ad * bd, a, b, backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return (g * c,)

    return _result1(a.data * c, a, backward, "scale")


def sigmoid(a: Tensor) -> Tensor:
    # 0.5*(1 + tanh(x/2)) equals the logistic function without overflow
    out = 0.5 * np.tanh(0.5 * a.data) + 0.5

    def backward(g):
        return (g * out * (1.0 - out),)

    return _result1(out, a, backward, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _result1(out, a, backward, "tanh")


# ---------------------------------------------------------------------------
# normalizations


def softmax(v: Tensor) -> Tensor:
    """Stable softmax of a vector (max-subtraction before exp)."""
    if v.ndim != 1 or v.shape[0] < 1:
        raise DimensionError(f"softmax expects a nonempty vector, got shape {v.shape}")
    shifted = v.data - v.data.max()
    e = np.exp(shifted)
    out = e / e.sum()

    def backward(g):
        return (out * (g - np.dot(g, out)),)

    return _result1(out, v, backward, "softmax")


def log_softmax(v: Tensor) -> Tensor:
    if v.ndim != 1 or v.shape[0] < 1:
        raise DimensionError(f"log_softmax expects a nonempty vector, got shape {v.shape}")
    shifted = v.data - v.data.max()
    lse = math.log(np.exp(shifted).sum())
    out = shifted - lse
    sm = np.exp(out)

    def backward(g):
        return (g - sm * g.sum(),)

    return _result1(out, v, backward, "log_softmax")


def layer_norm(v: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize a vector to zero mean and unit variance (no affine part)."""
    if v.ndim != 1:
        raise DimensionError(f"layer_norm expects a vector, got shape {v.shape}")
    d = v.shape[0]
    if d < 2:
        raise ContractError("layer_norm needs at least 2 features (variance degenerate)")
    inv_d = 1.0 / d
    mu = v.data.sum() * inv_d
    centered = v.data - mu
    inv_std = 1.0 / math.sqrt(centered.dot(centered) * inv_d + eps)
    out = centered * inv_std

    def backward(g):
        gm = g.sum() * inv_d
        proj = np.dot(g, out) * inv_d
        return (inv_std * (g - gm - out * proj),)

    return _result1(out, v, backward, "layer_norm")


def affine2(w1: Tensor, x: Tensor, w2: Tensor, h: Tensor) -> Tensor:
    """w1 @ x + w2 @ h for matrix weights and vector inputs, one graph node."""
    if w1.ndim != 2 or w2.ndim != 2 or x.ndim != 1 or h.ndim != 1:
        raise DimensionError("affine2 expects (matrix, vector, matrix, vector)")
    if w1.data.shape[1] != x.data.shape[0] or w2.data.shape[1] != h.data.shape[0] \
            or w1.data.shape[0] != w2.data.shape[0]:
        raise DimensionError(
            f"affine2: incompatible shapes {w1.shape}@{x.shape} + {w2.shape}@{h.shape}")
    w1d, xd, w2d, hd = w1.data, x.data, w2.data, h.data

    def backward(g):
        return g[:, None] * xd, w1d.T @ g, g[:, None] * hd, w2d.T @ g

    return _result(w1d @ xd + w2d @ hd, (w1, x, w2, h), backward, "affine2")


def muladd(a: Tensor, b: Tensor, c: Tensor) -> Tensor:
    """Elementwise a + b * c, one graph node."""
    if a.shape != b.shape or a.shape != c.shape:
        raise DimensionError(f"muladd: shape mismatch {a.shape}/{b.shape}/{c.shape}")
    bd, cd = b.data, c.data

    def backward(g):
        return g, g * cd, g * bd

    return _result(a.data + bd * cd, (a, b, c), backward, "muladd")


def gate_mix(z: Tensor, h: Tensor, c: Tensor) -> Tensor:
    """Gated state update (1 - z) * h + z * c, one graph node."""
    if z.shape != h.shape or z.shape != c.shape:
        raise DimensionError(f"gate_mix: shape mismatch {z.shape}/{h.shape}/{c.shape}")
    zd, hd, cd = z.data, h.data, c.data

    def backward(g):
        return g * (cd - hd), g * (1.0 - zd), g * zd

    return _result((1.0 - zd) * hd + zd * cd, (z, h, c), backward, "gate_mix")


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Add a vector to every row of a matrix."""
    if m.ndim != 2 or v.ndim != 1 or m.data.shape[1] != v.data.shape[0]:
        raise DimensionError(f"add_rowvec: shapes {m.shape} and {v.shape} incompatible")

    def backward(g):
        return g, g.sum(axis=0)

    return _result2(m.data + v.data, m, v, backward, "add_rowvec")


def layer_norm_affine(v: Tensor, gain: Tensor, bias: Tensor,
                      eps: float = 1e-6) -> Tensor:
    """layer_norm followed by elementwise gain and bias, fused into one op."""
    if v.ndim != 1 or gain.shape != v.shape or bias.shape != v.shape:
        raise DimensionError(
            f"layer_norm_affine: shapes {v.shape}/{gain.shape}/{bias.shape} must match")
    d = v.shape[0]
    if d < 2:
        raise ContractError("layer_norm needs at least 2 features (variance degenerate)")
    inv_d = 1.0 / d
    mu = v.data.sum() * inv_d
    centered = v.data - mu
    inv_std = 1.0 / math.sqrt(centered.dot(centered) * inv_d + eps)
    xhat = centered * inv_std
    gd = gain.data

    def backward(g):
        gx = g * gd
        proj = np.dot(gx, xhat) * inv_d
        dv = inv_std * (gx - gx.sum() * inv_d - xhat * proj)
        return dv, g * xhat, g

    return _result(xhat * gd + bias.data, (v, gain, bias), backward, "layer_norm_affine")


# ---------------------------------------------------------------------------
# structure


def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    if a.ndim != b.ndim:
        raise DimensionError(f"concat: rank mismatch {a.shape} vs {b.shape}")
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"concat: axis {axis} out of range for rank {a.ndim}")
    axis = axis % a.ndim
    for i in range(a.ndim):
        if i != axis and a.shape[i] != b.shape[i]:
            raise DimensionError(f"concat: shape mismatch {a.shape} vs {b.shape} on axis {i}")
    split = a.shape[axis]

    def backward(g):
        ga = np.take(g, range(split), axis=axis)
        gb = np.take(g, range(split, g.shape[axis]), axis=axis)
        return ga, gb

    return _result2(np.concatenate([a.data, b.data], axis=axis), a, b, backward, "concat")


def concat_all(parts: list[Tensor], axis: int = 0) -> Tensor:
    """Left fold of binary concat; convenience for >2 parts."""
    if not parts:
        raise DimensionError("concat_all of zero tensors")
    out = parts[0]
    for p in parts[1:]:
        out = concat(out, p, axis=axis)
    return out


def stack(vectors: list[Tensor]) -> Tensor:
    """Stack equal-length vectors into a (n, d) matrix."""
    if not vectors:
        raise DimensionError("stack of zero vectors")
    d = vectors[0].shape
    for v in vectors:
        if v.ndim != 1 or v.shape != d:
            raise DimensionError(f"stack expects equal-shape vectors, got {v.shape} vs {d}")

    def backward(g):
        return tuple(g[i] for i in range(len(vectors)))

    return _result(np.stack([v.data for v in vectors]), tuple(vectors), backward, "stack")


def narrow(t: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    if not -t.ndim <= axis < t.ndim:
        raise DimensionError(f"narrow: axis {axis} out of range for rank {t.ndim}")
    axis = axis % t.ndim
    if start < 0 or length < 1 or start + length > t.shape[axis]:
        raise DimensionError(
            f"narrow: window [{start}, {start + length}) outside extent {t.shape[axis]}"
        )
    sl = tuple(slice(None) if i != axis else slice(start, start + length) for i in range(t.ndim))
    shape = t.shape

    def backward(g):
        full = np.zeros(shape, dtype=np.float64)
        full[sl] = g
        return (full,)

    return _result1(t.data[sl].copy(), t, backward, "narrow")


def tile_rows(v: Tensor, n: int) -> Tensor:
    """Repeat a vector as the rows of an (n, d) matrix."""
    if v.ndim != 1:
        raise DimensionError(f"tile_rows expects a vector, got shape {v.shape}")
    if n < 1:
        raise DimensionError("tile_rows needs n >= 1")

    def backward(g):
        return (g.sum(axis=0),)

    return _result1(np.tile(v.data, (n, 1)), v, backward, "tile_rows")


def row(m: Tensor, i: int) -> Tensor:
    """Select one row of a matrix (embedding lookup); grad scatter-adds."""
    if m.ndim != 2:
        raise DimensionError(f"row expects a matrix, got shape {m.shape}")
    if not 0 <= i < m.shape[0]:
        raise DimensionError(f"row index {i} out of range for {m.shape[0]} rows")
    shape = m.shape

    def backward(g):
        full = np.zeros(shape, dtype=np.float64)
        full[i] = g
        return (full,)

    return _result1(m.data[i].copy(), m, backward, "row")


def sum_all(t: Tensor) -> Tensor:
    """Reduce to a rank-0 scalar."""
    shape = t.shape

    def backward(g):
        return (np.broadcast_to(g, shape).copy() if shape else g,)

    return _result1(np.asarray(t.data.sum()), t, backward, "sum_all")
