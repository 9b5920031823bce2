"""End-to-end sequence-to-sequence model assembly.

Embeddings with optional scaled sinusoidal position features feed a
bidirectional deep-transition encoder; the decoder alternates a query
transition, multi-head additive attention and a decoder transition, and
a feed-forward readout over [state; context; previous embedding]
produces the target logits. Training minimizes label-smoothed
cross-entropy averaged over non-pad target positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import AdditiveAttention, Annotations
from .cells import dropout_mask
from .checkpoint import load_tensors, save_tensors
from .errors import ContractError, DataError
from .tensor import Tensor
from .transition import BiEncoder, ShallowBlock, TransitionBlock, decoder_step

PAD, BOS, EOS, UNK = 0, 1, 2, 3


@dataclass
class ModelConfig:
    """Architecture hyperparameters; depths count T-GRUs above each bottom cell."""

    src_vocab: int
    tgt_vocab: int
    emb_dim: int = 64
    hidden_dim: int = 64
    enc_depth: int = 1
    query_depth: int = 1
    dec_depth: int = 1
    heads: int = 4
    layernorm: bool = True
    norm_candidate: bool = False
    positional_encoding: bool = True
    bottom_cell: str = "lgru"
    enc_transition: bool = True     # False: shallow bidirectional GRU encoder
    query_transition: bool = True   # False: single GRU forms the attention query
    dec_transition: bool = True     # False: single GRU consumes the context
    dropout_embedding: float = 0.0
    dropout_prediction: float = 0.0
    dropout_candidate: float = 0.0
    label_smoothing: float = 0.1
    shared_embeddings: bool = False

    def __post_init__(self):
        if min(self.src_vocab, self.tgt_vocab) <= len(("pad", "bos", "eos", "unk")):
            raise ContractError("vocab must exceed the 4 reserved tokens")
        if min(self.emb_dim, self.hidden_dim) < 1:
            raise ContractError("dimensions must be positive")
        if self.heads < 1 or (2 * self.hidden_dim) % self.heads != 0:
            raise ContractError("heads must divide twice the hidden dim")
        if min(self.enc_depth, self.query_depth, self.dec_depth) < 0:
            raise ContractError("depths must be >= 0")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ContractError("label smoothing must lie in [0, 1)")
        for rate in (self.dropout_embedding, self.dropout_prediction, self.dropout_candidate):
            if not 0.0 <= rate < 1.0:
                raise ContractError("dropout rates must lie in [0, 1)")
        if self.positional_encoding and self.emb_dim % 2 != 0:
            raise ContractError("positional encoding needs an even embedding dim")
        if self.bottom_cell not in ("lgru", "gru"):
            raise ContractError(f"unknown bottom cell {self.bottom_cell!r}")
        if self.shared_embeddings and self.src_vocab != self.tgt_vocab:
            raise ContractError("shared embeddings need equal vocab sizes")


def uniform_depth_config(src_vocab: int, tgt_vocab: int, depth: int, **kw) -> ModelConfig:
    """Named configuration: the same transition depth in all three modules."""
    return ModelConfig(src_vocab, tgt_vocab, enc_depth=depth, query_depth=depth,
                       dec_depth=depth, **kw)


def positional_encoding(pos: int, dim: int) -> np.ndarray:
    """Sinusoidal position features scaled by 1/sqrt(dim).

    PE[2i] = sin(pos / 10000^(2i/dim)), PE[2i+1] = cos(same argument).
    """
    if pos < 0:
        raise ContractError("position must be >= 0")
    if dim % 2 != 0:
        raise ContractError("positional encoding needs an even dimension")
    i2 = np.arange(0, dim, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i2 / dim)
    out = np.empty(dim)
    out[0::2] = np.sin(angle)
    out[1::2] = np.cos(angle)
    return out / math.sqrt(dim)


_PE_CACHE: dict[tuple[int, int], Tensor] = {}


def _pe_tensor(pos: int, dim: int) -> Tensor:
    key = (pos, dim)
    t = _PE_CACHE.get(key)
    if t is None:
        t = Tensor(positional_encoding(pos, dim))
        _PE_CACHE[key] = t
    return t


def label_smoothed_loss(logits: Tensor, gold: int, eps: float) -> Tensor:
    """Cross-entropy against (1-eps)*onehot(gold) + eps/V spread over all classes."""
    v = logits.shape[0]
    if not 0 <= gold < v:
        raise DataError(f"gold index {gold} out of range for {v} classes")
    q = np.full(v, eps / v)
    q[gold] += 1.0 - eps
    shifted = logits.data - logits.data.max()
    log_probs = shifted - math.log(np.exp(shifted).sum())
    probs = np.exp(log_probs)

    def backward(g):
        return ((probs - q) * g,)

    return T.fused_result(np.asarray(-np.dot(q, log_probs)), (logits,),
                          backward, "label_smoothed_loss")


class Seq2SeqModel:
    """Deep-transition encoder/decoder with additive multi-head attention."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        d_x, d = cfg.emb_dim, cfg.hidden_dim
        self.src_emb = Tensor(np.zeros((cfg.src_vocab, d_x)), requires_grad=True)
        self.tgt_emb = self.src_emb if cfg.shared_embeddings else Tensor(
            np.zeros((cfg.tgt_vocab, d_x)), requires_grad=True)
        block_opts = dict(layernorm=cfg.layernorm, dropout=cfg.dropout_candidate,
                          norm_candidate=cfg.norm_candidate)
        if cfg.enc_transition:
            fwd = TransitionBlock(d_x, d, cfg.enc_depth, cfg.bottom_cell, **block_opts)
            bwd = TransitionBlock(d_x, d, cfg.enc_depth, cfg.bottom_cell, **block_opts)
        else:
            fwd, bwd = ShallowBlock(d_x, d, **block_opts), ShallowBlock(d_x, d, **block_opts)
        self.encoder = BiEncoder(fwd, bwd)
        if cfg.query_transition:
            self.query_block = TransitionBlock(d_x, d, cfg.query_depth,
                                               cfg.bottom_cell, **block_opts)
        else:
            self.query_block = ShallowBlock(d_x, d, **block_opts)
        if cfg.dec_transition:
            self.dec_block = TransitionBlock(2 * d, d, cfg.dec_depth,
                                             cfg.bottom_cell, **block_opts)
        else:
            self.dec_block = ShallowBlock(2 * d, d, **block_opts)
        self.attention = AdditiveAttention(d, 2 * d, cfg.heads)
        self.w_f = Tensor(np.zeros((d, d + 2 * d + d_x)), requires_grad=True)
        self.w_out = Tensor(np.zeros((cfg.tgt_vocab, d)), requires_grad=True)
        self._zero_state = Tensor(np.zeros(d))

    # -- parameters ---------------------------------------------------------

    def named_params(self) -> list[tuple[str, Tensor]]:
        out = [("src_emb", self.src_emb)]
        if not self.cfg.shared_embeddings:
            out.append(("tgt_emb", self.tgt_emb))
        out.extend(self.encoder.named_params("enc"))
        out.extend(self.query_block.named_params("query"))
        out.extend(self.dec_block.named_params("dec"))
        out.extend(self.attention.named_params("attn"))
        out.extend([("out.w_f", self.w_f), ("out.w_out", self.w_out)])
        return out

    def zero_grad(self) -> None:
        for _, t in self.named_params():
            t.grad = None

    def num_params(self) -> int:
        return sum(t.data.size for _, t in self.named_params())

    # -- embedding ----------------------------------------------------------

    def _embed(self, table: Tensor, token: int, pos: int, vocab: int,
               train: bool, rng) -> Tensor:
        if not 0 <= token < vocab:
            raise DataError(f"token id {token} outside vocabulary of size {vocab}")
        e = T.row(table, token)
        if self.cfg.positional_encoding:
            e = T.add(e, _pe_tensor(pos, self.cfg.emb_dim))
        if train and self.cfg.dropout_embedding > 0.0:
            e = T.mul(e, dropout_mask(self.cfg.emb_dim, self.cfg.dropout_embedding, rng))
        return e

    def embed_source(self, src_ids: list[int], train: bool = False, rng=None) -> list[Tensor]:
        return [self._embed(self.src_emb, tok, j, self.cfg.src_vocab, train, rng)
                for j, tok in enumerate(src_ids)]

    def embed_target(self, token: int, pos: int, train: bool = False, rng=None) -> Tensor:
        return self._embed(self.tgt_emb, token, pos, self.cfg.tgt_vocab, train, rng)

    # -- forward ------------------------------------------------------------

    def encode_source(self, src_ids: list[int], train: bool = False, rng=None) -> Annotations:
        if not src_ids:
            raise ContractError("source sequence is empty")
        return self.encoder.encode(self.embed_source(src_ids, train, rng), train, rng)

    def output_network(self, s: Tensor, context: Tensor, y_prev_emb: Tensor,
                       train: bool = False, rng=None) -> Tensor:
        """logits = W_out tanh(W_f [s; context; y_prev_emb]); one graph node."""
        d = self.cfg.hidden_dim
        w_f, w_out = self.w_f.data, self.w_out.data
        cat = np.concatenate([s.data, context.data, y_prev_emb.data])
        hidden = np.tanh(w_f @ cat)
        if train and self.cfg.dropout_prediction > 0.0:
            keep = 1.0 - self.cfg.dropout_prediction
            mask = (rng.random(d) < keep).astype(np.float64) / keep
            dropped = hidden * mask
        else:
            mask = None
            dropped = hidden

        def backward(g):
            d_w_out = g[:, None] * dropped
            dh = w_out.T @ g
            if mask is not None:
                dh = dh * mask
            dpre = dh * (1.0 - hidden * hidden)
            dcat = w_f.T @ dpre
            return (dcat[:d], dcat[d:3 * d], dcat[3 * d:],
                    dpre[:, None] * cat, d_w_out)

        return T.fused_result(w_out @ dropped,
                              (s, context, y_prev_emb, self.w_f, self.w_out),
                              backward, "output_network")

    def forward_teacher_forced(self, src_ids: list[int], tgt_ids: list[int],
                               train: bool = False, rng=None
                               ) -> tuple[list[Tensor], Tensor]:
        """Teacher-forced pass; returns per-step logits and the mean smoothed loss.

        `tgt_ids` must end with EOS; PAD positions contribute nothing to
        the loss. The first decoder input is the BOS embedding.
        """
        if not src_ids or not tgt_ids:
            raise ContractError("source and target must be nonempty")
        non_pad = [t for t in tgt_ids if t != PAD]
        if not non_pad or non_pad[-1] != EOS:
            raise ContractError("target must end with the EOS token")
        ann = self.encode_source(src_ids, train, rng)
        s = self._zero_state
        logits_seq: list[Tensor] = []
        losses: list[Tensor] = []
        y_prev = BOS
        for t, gold in enumerate(tgt_ids):
            y_emb = self.embed_target(y_prev, t, train, rng)
            step = decoder_step(self.query_block, self.dec_block, self.attention,
                                y_emb, s, ann, train, rng)
            logits = self.output_network(step.state, step.context, y_emb, train, rng)
            logits_seq.append(logits)
            if gold != PAD:
                losses.append(label_smoothed_loss(logits, gold, self.cfg.label_smoothing))
            s = step.state
            y_prev = gold
        if not losses:
            raise ContractError("target contains only PAD positions")
        total = losses[0]
        for piece in losses[1:]:
            total = T.add(total, piece)
        return logits_seq, T.scale(total, 1.0 / len(losses))

    # -- incremental decoding (eval mode, no tape required) -----------------

    def start_state(self) -> Tensor:
        return self._zero_state

    def decode_step(self, ann: Annotations, s_prev: Tensor, y_prev: int, pos: int
                    ) -> tuple[np.ndarray, Tensor]:
        """One eval-mode step; returns (log-probabilities, next state)."""
        y_emb = self.embed_target(y_prev, pos)
        step = decoder_step(self.query_block, self.dec_block, self.attention,
                            y_emb, s_prev, ann)
        logits = self.output_network(step.state, step.context, y_emb)
        return T.log_softmax(logits).data, step.state

    # -- persistence --------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.named_params()}

    def save(self, path) -> None:
        save_tensors(path, self.state_dict())

    def load(self, path) -> None:
        stored = load_tensors(path)
        own = dict(self.named_params())
        if set(stored) != set(own):
            missing = sorted(set(own) - set(stored))[:3]
            extra = sorted(set(stored) - set(own))[:3]
            raise DataError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
        for name, t in own.items():
            if stored[name].shape != t.data.shape:
                raise DataError(f"checkpoint tensor {name}: shape {stored[name].shape} "
                                f"!= expected {t.data.shape}")
            t.data = stored[name]
