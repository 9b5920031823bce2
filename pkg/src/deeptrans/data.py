"""Vocabularies, synthetic parallel corpora and length-bucketed batching.

Three desk-scale tasks stand in for real translation data:

  * copy     target repeats the source
  * reverse  target is the source in reverse order
  * lexsub   target applies a seed-fixed bijective token substitution

Corpus generation is fully determined by (task spec, seed); the three
splits are disjoint by source sequence, so memorization of the training
set cannot score on valid/test.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError
from .model import BOS, EOS, PAD, UNK

RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")


class Vocabulary:
    """Bijective token/index map with fixed reserved entries at 0..3."""

    def __init__(self, tokens: list[str]):
        if list(tokens[: len(RESERVED)]) != list(RESERVED):
            raise DataError(f"vocabulary must start with the reserved tokens {RESERVED}")
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise DataError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def of_size(cls, size: int) -> "Vocabulary":
        """Reserved tokens plus content words w4, w5, ... up to `size` entries."""
        if size <= len(RESERVED):
            raise DataError(f"vocab size {size} leaves no room for content tokens")
        return cls(list(RESERVED) + [f"w{i}" for i in range(len(RESERVED), size)])

    def encode(self, words: list[str]) -> list[int]:
        return [self.index.get(w, UNK) for w in words]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def content_ids(self) -> list[int]:
        return list(range(len(RESERVED), len(self.tokens)))

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode()).hexdigest()[:16]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for tok in self.tokens:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f if line.rstrip("\n")])


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "copy"              # copy | reverse | lexsub
    vocab_size: int = 16
    len_min: int = 5
    len_max: int = 15
    n_train: int = 10000
    n_valid: int = 200
    n_test: int = 200
    seed: int = 1

    def __post_init__(self):
        if self.kind not in ("copy", "reverse", "lexsub"):
            raise DataError(f"unknown task kind {self.kind!r}")
        if not 1 <= self.len_min <= self.len_max:
            raise DataError("need 1 <= len_min <= len_max")
        if min(self.n_train, self.n_valid, self.n_test) < 1:
            raise DataError("corpus split sizes must be positive")


@dataclass
class Corpus:
    spec: TaskSpec
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    train: list[tuple[list[int], list[int]]]
    valid: list[tuple[list[int], list[int]]]
    test: list[tuple[list[int], list[int]]]
    token_map: dict[int, int] | None = None  # lexsub bijection, else None


def _lexsub_map(content: list[int], rng: np.random.Generator) -> dict[int, int]:
    # rotate by a random nonzero offset, then shuffle: bijective, never identity
    perm = list(content)
    rng.shuffle(perm)
    if perm == content:
        perm = perm[1:] + perm[:1]
    return dict(zip(content, perm))


def build_corpus(spec: TaskSpec) -> Corpus:
    vocab = Vocabulary.of_size(spec.vocab_size)
    content = vocab.content_ids()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
    token_map = _lexsub_map(content, rng) if spec.kind == "lexsub" else None

    total = spec.n_train + spec.n_valid + spec.n_test
    n_lengths = spec.len_max - spec.len_min + 1
    capacity = sum(len(content) ** L for L in range(spec.len_min, spec.len_max + 1))
    if total > capacity:
        raise DataError(f"cannot draw {total} distinct sequences; space holds {capacity}")
    seen: set[tuple[int, ...]] = set()
    sources: list[list[int]] = []
    while len(sources) < total:
        length = spec.len_min + int(rng.integers(n_lengths))
        cand = tuple(content[int(i)] for i in rng.integers(len(content), size=length))
        if cand in seen:
            continue
        seen.add(cand)
        sources.append(list(cand))

    def target_of(src: list[int]) -> list[int]:
        if spec.kind == "copy":
            return list(src)
        if spec.kind == "reverse":
            return list(reversed(src))
        return [token_map[t] for t in src]

    pairs = [(src, target_of(src)) for src in sources]
    return Corpus(
        spec=spec,
        src_vocab=vocab,
        tgt_vocab=vocab,
        train=pairs[: spec.n_train],
        valid=pairs[spec.n_train: spec.n_train + spec.n_valid],
        test=pairs[spec.n_train + spec.n_valid:],
        token_map=token_map,
    )


def write_parallel(pairs, vocab: Vocabulary, src_path, tgt_path) -> None:
    """One whitespace-joined sentence per line, files aligned by line number."""
    with open(src_path, "w", encoding="utf-8") as fs, open(tgt_path, "w", encoding="utf-8") as ft:
        for src, tgt in pairs:
            fs.write(" ".join(vocab.decode(src)) + "\n")
            ft.write(" ".join(vocab.decode(tgt)) + "\n")


def make_batches(pairs, batch_tokens: int) -> list[list[tuple[list[int], list[int]]]]:
    """Sort by length, slice into batches whose total token count fits the budget."""
    if batch_tokens < 1:
        raise ContractError("batch token budget must be positive")
    order = sorted(range(len(pairs)),
                   key=lambda i: (len(pairs[i][0]), pairs[i][0], pairs[i][1]))
    batches: list[list] = []
    current: list = []
    used = 0
    for i in order:
        src, tgt = pairs[i]
        cost = len(src) + len(tgt) + 1  # +1 for the EOS appended in training
        if current and used + cost > batch_tokens:
            batches.append(current)
            current, used = [], 0
        current.append(pairs[i])
        used += cost
    if current:
        batches.append(current)
    return batches


def epoch_order(n_batches: int, seed: int, epoch: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(1, epoch))))
    return rng.permutation(n_batches)
