"""Deep transition blocks and their wiring into encoder and decoder.

A transition block applies one L-GRU (which consumes the external input
and the recurrent state) followed by `depth` T-GRUs, each transforming
the previous layer's output as its state. The recurrent connection runs
from the block's top output back into the bottom cell at the next step.

Three blocks make up the full network: the encoder transition (run in
both directions over the source), the query transition (before
attention) and the decoder transition (after attention, consuming the
attention context as input). Any block can be swapped for a single
conventional GRU to reproduce the shallow baseline wiring.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attention import AdditiveAttention, Annotations
from .cells import GRUCell, LGRUCell, TGRUCell
from .errors import ContractError
from .tensor import Tensor


class TransitionBlock:
    """Bottom input cell (L-GRU or plain GRU) plus `depth` T-GRUs."""

    def __init__(self, d_x: int, d: int, depth: int, bottom: str = "lgru",
                 layernorm: bool = False, dropout: float = 0.0,
                 norm_candidate: bool = False):
        if depth < 0:
            raise ContractError("transition depth must be >= 0")
        opts = dict(layernorm=layernorm, dropout=dropout, norm_candidate=norm_candidate)
        if bottom == "lgru":
            self.bottom = LGRUCell(d_x, d, **opts)
        elif bottom == "gru":
            self.bottom = GRUCell(d_x, d, **opts)
        else:
            raise ContractError(f"unknown bottom cell {bottom!r}")
        self.tgrus = [TGRUCell(d, **opts) for _ in range(depth)]
        self.d_x, self.d, self.depth = d_x, d, depth

    def apply(self, x: Tensor, h_prev: Tensor, train: bool = False,
              rng: np.random.Generator | None = None) -> Tensor:
        h = self.bottom.step(x, h_prev, train, rng)
        for cell in self.tgrus:
            h = cell.step(h, train, rng)
        return h

    def named_params(self, prefix: str):
        yield from self.bottom.named_params(f"{prefix}.bottom")
        for k, cell in enumerate(self.tgrus):
            yield from cell.named_params(f"{prefix}.tgru{k}")


class ShallowBlock:
    """Single conventional GRU standing in for a transition block (ablations)."""

    depth = 0

    def __init__(self, d_x: int, d: int, layernorm: bool = False,
                 dropout: float = 0.0, norm_candidate: bool = False):
        self.cell = GRUCell(d_x, d, layernorm=layernorm, dropout=dropout,
                            norm_candidate=norm_candidate)
        self.d_x, self.d = d_x, d

    def apply(self, x: Tensor, h_prev: Tensor, train: bool = False,
              rng: np.random.Generator | None = None) -> Tensor:
        return self.cell.step(x, h_prev, train, rng)

    def named_params(self, prefix: str):
        yield from self.cell.named_params(f"{prefix}.gru")


class BiEncoder:
    """Runs one block left-to-right and another right-to-left, concatenating states."""

    def __init__(self, fwd, bwd):
        if fwd.d != bwd.d:
            raise ContractError("encoder directions must share state width")
        self.fwd, self.bwd = fwd, bwd

    def encode(self, embedded: list[Tensor], train: bool = False,
               rng: np.random.Generator | None = None) -> Annotations:
        if not embedded:
            raise ContractError("cannot encode an empty source")
        zero = Tensor(np.zeros(self.fwd.d))
        fwd_states = []
        h = zero
        for x in embedded:
            h = self.fwd.apply(x, h, train, rng)
            fwd_states.append(h)
        bwd_states = [None] * len(embedded)
        h = zero
        for j in range(len(embedded) - 1, -1, -1):
            h = self.bwd.apply(embedded[j], h, train, rng)
            bwd_states[j] = h
        return Annotations([T.concat(f, b) for f, b in zip(fwd_states, bwd_states)])

    def named_params(self, prefix: str):
        yield from self.fwd.named_params(f"{prefix}.fwd")
        yield from self.bwd.named_params(f"{prefix}.bwd")


@dataclass
class DecoderStepState:
    """All intermediate states of one decoder step.

    `query_chain` holds the pre-attention states (bottom cell first),
    `dec_chain` the post-attention ones; `state` is the final state that
    recurs into the next step.
    """

    query_chain: list = field(default_factory=list)
    context: Tensor | None = None
    weights: np.ndarray | None = None
    dec_chain: list = field(default_factory=list)

    @property
    def query_state(self) -> Tensor:
        return self.query_chain[-1]

    @property
    def state(self) -> Tensor:
        return self.dec_chain[-1]


def decoder_step(query_block, dec_block, attention: AdditiveAttention,
                 y_prev_emb: Tensor, s_prev: Tensor, ann: Annotations,
                 train: bool = False, rng: np.random.Generator | None = None
                 ) -> DecoderStepState:
    """One target step: query transition, attention, decoder transition."""
    out = DecoderStepState()
    if isinstance(query_block, TransitionBlock):
        h = query_block.bottom.step(y_prev_emb, s_prev, train, rng)
        out.query_chain.append(h)
        for cell in query_block.tgrus:
            h = cell.step(h, train, rng)
            out.query_chain.append(h)
    else:
        out.query_chain.append(query_block.apply(y_prev_emb, s_prev, train, rng))
    out.context, out.weights = attention.attend(out.query_state, ann)
    if isinstance(dec_block, TransitionBlock):
        h = dec_block.bottom.step(out.context, out.query_state, train, rng)
        out.dec_chain.append(h)
        for cell in dec_block.tgrus:
            h = cell.step(h, train, rng)
            out.dec_chain.append(h)
    else:
        out.dec_chain.append(dec_block.apply(out.context, out.query_state, train, rng))
    return out
