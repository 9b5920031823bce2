"""Multi-head additive attention over encoder annotations.

Each head scores a query against every annotation with the additive
(tanh + dot) form

    e_j = v . tanh(Wq q + Wk a_j)

in a per-head space of width d_head = ann_dim / heads, softmaxes the
scores, and averages its contiguous slice of the annotation vectors.
Head contexts are concatenated and passed through a learned output
projection back to ann_dim.

Key projections (Wk a_j) depend only on the annotations, so they are
computed once per sentence and cached on the Annotations object; results
are bit-identical to recomputing them at every step.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Tensor


class Annotations:
    """Per-position encoder annotation vectors plus their stacked matrix."""

    def __init__(self, vectors: list[Tensor]):
        if not vectors:
            raise ContractError("annotations must cover at least one position")
        self.vectors = vectors
        self.matrix = T.stack(vectors)  # (n, ann_dim)
        self.cache: dict = {}

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def dim(self) -> int:
        return self.vectors[0].shape[0]


def _attend_head(query: Tensor, w_q: Tensor, v: Tensor, keys: Tensor,
                 values: Tensor) -> tuple[Tensor, np.ndarray]:
    """One head: additive scores, softmax, weighted value sum; one graph node.

    scores_j = v . tanh(keys_j + w_q @ query); context = softmax(scores) @ values.
    """
    qd, wqd, vd = query.data, w_q.data, v.data
    kd, vald = keys.data, values.data
    t = np.tanh(kd + wqd @ qd)
    scores = t @ vd
    e = np.exp(scores - scores.max())
    a = e / e.sum()
    ctx = a @ vald

    def backward(dctx):
        da = vald @ dctx
        d_values = a[:, None] * dctx[None, :]
        ds = a * (da - np.dot(a, da))
        d_v = t.T @ ds
        dpre = (ds[:, None] * vd[None, :]) * (1.0 - t * t)
        dq_a = dpre.sum(axis=0)
        return wqd.T @ dq_a, dq_a[:, None] * qd, d_v, dpre, d_values

    out = T.fused_result(ctx, (query, w_q, v, keys, values), backward, "attend_head")
    return out, a


class AdditiveAttention:
    """Bahdanau-style scoring replicated over `heads` parallel heads."""

    def __init__(self, query_dim: int, ann_dim: int, heads: int):
        if heads < 1 or ann_dim % heads != 0:
            raise ContractError(f"head count {heads} must divide annotation width {ann_dim}")
        self.query_dim = query_dim
        self.ann_dim = ann_dim
        self.heads = heads
        self.d_head = ann_dim // heads
        self.w_q = [Tensor(np.zeros((self.d_head, query_dim)), requires_grad=True)
                    for _ in range(heads)]
        self.w_k = [Tensor(np.zeros((ann_dim, self.d_head)), requires_grad=True)
                    for _ in range(heads)]
        self.v = [Tensor(np.zeros(self.d_head), requires_grad=True) for _ in range(heads)]
        self.w_out = Tensor(np.zeros((ann_dim, ann_dim)), requires_grad=True)

    def _prepared(self, ann: Annotations):
        prep = ann.cache.get(id(self))
        if prep is None:
            keys = [T.matmul(ann.matrix, wk) for wk in self.w_k]        # (n, d_head)
            values = [T.narrow(ann.matrix, 1, h * self.d_head, self.d_head)
                      for h in range(self.heads)]                        # (n, d_head)
            prep = (keys, values)
            ann.cache[id(self)] = prep
        return prep

    def attend(self, query: Tensor, ann: Annotations) -> tuple[Tensor, np.ndarray]:
        """Returns (context vector of width ann_dim, per-head weights (H, n))."""
        n = len(ann)
        keys, values = self._prepared(ann)
        contexts = []
        weights = np.empty((self.heads, n))
        for h in range(self.heads):
            ctx, a = _attend_head(query, self.w_q[h], self.v[h], keys[h], values[h])
            weights[h] = a
            contexts.append(ctx)
        context = T.matmul(self.w_out, T.concat_all(contexts, axis=0))
        return context, weights

    def named_params(self, prefix: str):
        for h in range(self.heads):
            yield f"{prefix}.head{h}.w_q", self.w_q[h]
            yield f"{prefix}.head{h}.w_k", self.w_k[h]
            yield f"{prefix}.head{h}.v", self.v[h]
        yield f"{prefix}.w_out", self.w_out
