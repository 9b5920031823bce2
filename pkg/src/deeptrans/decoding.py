"""Beam search, greedy decoding and corpus BLEU.

Beam hypotheses are ranked by cumulative log-probability divided by a
length penalty. Two penalty forms are supported:

  * "gnmt":   lp(n) = ((5 + n) / 6) ** alpha
  * "length": lp(n) = n  (pure per-token normalization, alpha unused)

A hypothesis finishes when it emits EOS; its slot is refilled from the
expansion pool. Search stops once the best live hypothesis's current
key cannot beat the best finished key (keys only shrink as raw log
probability accrues faster than the penalty at equal length), or at
max_len. With beam 1 this reduces exactly to greedy decoding.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .model import BOS, EOS, Seq2SeqModel


def length_penalty(length: int, alpha: float, kind: str = "gnmt") -> float:
    if kind == "gnmt":
        return ((5.0 + length) / 6.0) ** alpha
    if kind == "length":
        return float(max(length, 1))
    raise ContractError(f"unknown length penalty {kind!r}")


def default_max_len(src_len: int) -> int:
    return 2 * src_len + 10


@dataclass
class BeamHypothesis:
    tokens: list[int] = field(default_factory=list)
    logprob: float = 0.0
    state: object = None
    finished: bool = False

    def key(self, alpha: float, kind: str) -> float:
        return self.logprob / length_penalty(max(len(self.tokens), 1), alpha, kind)


def greedy_decode(model: Seq2SeqModel, src_ids: list[int],
                  max_len: int | None = None) -> list[int]:
    """Argmax decoding; returns generated tokens without the final EOS."""
    if not src_ids:
        raise ContractError("cannot decode an empty source")
    if max_len is None:
        max_len = default_max_len(len(src_ids))
    ann = model.encode_source(src_ids)
    s = model.start_state()
    y_prev = BOS
    out: list[int] = []
    for pos in range(max_len):
        logp, s = model.decode_step(ann, s, y_prev, pos)
        y_prev = int(logp.argmax())
        if y_prev == EOS:
            break
        out.append(y_prev)
    return out


def beam_search(model: Seq2SeqModel, src_ids: list[int], beam_size: int = 4,
                alpha: float = 0.6, max_len: int | None = None,
                norm: str = "gnmt") -> tuple[list[int], float, float]:
    """Returns (tokens without EOS, normalized score, raw log-probability)."""
    if not src_ids:
        raise ContractError("cannot decode an empty source")
    if beam_size < 1 or (max_len is not None and max_len < 1):
        raise ContractError("beam_size and max_len must be >= 1")
    if max_len is None:
        max_len = default_max_len(len(src_ids))
    ann = model.encode_source(src_ids)
    live = [BeamHypothesis(state=model.start_state())]
    finished: list[BeamHypothesis] = []
    for pos in range(max_len):
        pool: list[BeamHypothesis] = []
        for hyp in live:
            y_prev = hyp.tokens[-1] if hyp.tokens else BOS
            logp, new_state = model.decode_step(ann, hyp.state, y_prev, pos)
            # stable descending order: ties resolve to the lowest index, like argmax
            order = np.argsort(-logp, kind="stable")[: beam_size + 1]
            for tok in order:
                pool.append(BeamHypothesis(tokens=hyp.tokens + [int(tok)],
                                           logprob=hyp.logprob + float(logp[tok]),
                                           state=new_state,
                                           finished=int(tok) == EOS))
        pool.sort(key=lambda h: h.logprob, reverse=True)
        next_live = []
        for hyp in pool:
            if hyp.finished:
                finished.append(hyp)
            elif len(next_live) < beam_size:
                next_live.append(hyp)
        live = next_live
        if not live:
            break
        if finished:
            best_done = max(finished, key=lambda h: h.key(alpha, norm))
            best_live = max(live, key=lambda h: h.key(alpha, norm))
            if best_live.key(alpha, norm) <= best_done.key(alpha, norm):
                break
    candidates = finished if finished else live
    best = max(candidates, key=lambda h: h.key(alpha, norm))
    tokens = best.tokens[:-1] if best.finished else best.tokens
    return tokens, best.key(alpha, norm), best.logprob


def rescore(model: Seq2SeqModel, src_ids: list[int], tokens: list[int]) -> float:
    """Sum of gold-token log-probabilities for tokens + EOS (teacher forcing)."""
    ann = model.encode_source(src_ids)
    s = model.start_state()
    y_prev = BOS
    total = 0.0
    for pos, gold in enumerate(tokens + [EOS]):
        logp, s = model.decode_step(ann, s, y_prev, pos)
        total += float(logp[gold])
        y_prev = gold
    return total


# ---------------------------------------------------------------------------
# metrics


def _ngrams(seq: list, n: int) -> Counter:
    return Counter(tuple(seq[i:i + n]) for i in range(len(seq) - n + 1))


def bleu4(hypotheses: list[list], references: list[list]) -> float:
    """Corpus BLEU with modified 1..4-gram precision and brevity penalty, x100."""
    if not hypotheses or len(hypotheses) != len(references):
        raise ContractError("need equal, nonzero hypothesis and reference counts")
    matched = [0] * 4
    total = [0] * 4
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, 5):
            counts = _ngrams(hyp, n)
            limits = _ngrams(ref, n)
            total[n - 1] += max(len(hyp) - n + 1, 0)
            matched[n - 1] += sum(min(c, limits.get(g, 0)) for g, c in counts.items())
    if hyp_len == 0 or any(t == 0 or m == 0 for m, t in zip(matched, total)):
        return 0.0
    log_precision = sum(math.log(m / t) for m, t in zip(matched, total)) / 4.0
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_precision)


def token_accuracy(hypotheses: list[list], references: list[list]) -> float:
    """Micro-averaged positional match rate; length mismatches count as errors."""
    if not hypotheses or len(hypotheses) != len(references):
        raise ContractError("need equal, nonzero hypothesis and reference counts")
    correct = 0
    denom = 0
    for hyp, ref in zip(hypotheses, references):
        denom += max(len(hyp), len(ref))
        correct += sum(1 for a, b in zip(hyp, ref) if a == b)
    return correct / denom if denom else 0.0


def exact_match(hypotheses: list[list], references: list[list]) -> float:
    if not hypotheses or len(hypotheses) != len(references):
        raise ContractError("need equal, nonzero hypothesis and reference counts")
    hits = sum(1 for h, r in zip(hypotheses, references) if h == r)
    return hits / len(hypotheses)
