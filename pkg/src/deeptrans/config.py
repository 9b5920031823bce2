"""Flat key=value run configuration.

A run config merges task, model and optimizer settings. Files hold one
`key = value` per line with `#` comments; command-line overrides use the
same `key=value` syntax. Unknown keys are rejected with a spelling
suggestion. `snapshot`/`parse_config` round-trip exactly, so the
resolved snapshot written next to a checkpoint reproduces the run.
"""

from __future__ import annotations

import difflib
from dataclasses import asdict, dataclass, fields

from .data import TaskSpec
from .errors import DataError
from .model import ModelConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    # task
    task: str = "copy"
    vocab_size: int = 16
    len_min: int = 5
    len_max: int = 15
    train_size: int = 10000
    valid_size: int = 200
    test_size: int = 200
    # model
    depth: int = -1                 # >= 0 sets all three transition depths
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
    enc_transition: bool = True
    query_transition: bool = True
    dec_transition: bool = True
    dropout_embedding: float = 0.0
    dropout_prediction: float = 0.0
    dropout_candidate: float = 0.0
    label_smoothing: float = 0.1
    shared_embeddings: bool = False
    # optimization
    lr0: float = 1e-3
    warmup_steps: int = 500
    decay_start: int = 8000
    decay_end: int = 64000
    replicas: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-6
    init_range: float = 0.08
    batch_tokens: int = 400
    max_steps: int = 2000
    patience: int = 0
    val_interval: int = 200
    val_metric: str = "accuracy"
    clip_norm: float = 5.0
    # bookkeeping
    seed: int = 1
    out_dir: str = "run"
    src_vocab_hash: str = ""        # written by train, checked by decode
    tgt_vocab_hash: str = ""

    def __post_init__(self):
        if self.depth >= 0:
            self.enc_depth = self.query_depth = self.dec_depth = self.depth

    def task_spec(self) -> TaskSpec:
        return TaskSpec(kind=self.task, vocab_size=self.vocab_size,
                        len_min=self.len_min, len_max=self.len_max,
                        n_train=self.train_size, n_valid=self.valid_size,
                        n_test=self.test_size, seed=self.seed)

    def model_config(self, src_vocab: int, tgt_vocab: int) -> ModelConfig:
        return ModelConfig(
            src_vocab=src_vocab, tgt_vocab=tgt_vocab,
            emb_dim=self.emb_dim, hidden_dim=self.hidden_dim,
            enc_depth=self.enc_depth, query_depth=self.query_depth,
            dec_depth=self.dec_depth, heads=self.heads,
            layernorm=self.layernorm, norm_candidate=self.norm_candidate,
            positional_encoding=self.positional_encoding,
            bottom_cell=self.bottom_cell,
            enc_transition=self.enc_transition,
            query_transition=self.query_transition,
            dec_transition=self.dec_transition,
            dropout_embedding=self.dropout_embedding,
            dropout_prediction=self.dropout_prediction,
            dropout_candidate=self.dropout_candidate,
            label_smoothing=self.label_smoothing,
            shared_embeddings=self.shared_embeddings,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr0=self.lr0, warmup_steps=self.warmup_steps,
            decay_start=self.decay_start, decay_end=self.decay_end,
            replicas=self.replicas, adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2, adam_eps=self.adam_eps,
            init_range=self.init_range, batch_tokens=self.batch_tokens,
            max_steps=self.max_steps, patience=self.patience,
            val_interval=self.val_interval, val_metric=self.val_metric,
            clip_norm=self.clip_norm, seed=self.seed,
        )


_FIELDS = {f.name: f.type for f in fields(RunConfig)}
_BOOL_TRUE = {"true", "1", "yes", "on"}
_BOOL_FALSE = {"false", "0", "no", "off"}


def _parse_value(key: str, raw: str, where: str):
    kind = _FIELDS[key]
    raw = raw.strip()
    try:
        if kind == "bool" or kind is bool:
            low = raw.lower()
            if low in _BOOL_TRUE:
                return True
            if low in _BOOL_FALSE:
                return False
            raise ValueError(f"expected true/false, got {raw!r}")
        if kind == "int" or kind is int:
            return int(raw)
        if kind == "float" or kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise DataError(f"{where}: bad value for {key!r}: {exc}") from None


def _check_key(key: str, where: str) -> None:
    if key not in _FIELDS:
        hint = difflib.get_close_matches(key, _FIELDS, n=1)
        suggestion = f" (did you mean {hint[0]!r}?)" if hint else ""
        raise DataError(f"{where}: unknown config key {key!r}{suggestion}")


def parse_config(path: str | None = None, overrides: list[str] | None = None) -> RunConfig:
    """Read `key = value` lines, then apply `key=value` override strings."""
    values: dict = {}
    if path is not None:
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                text = line.split("#", 1)[0].strip()
                if not text:
                    continue
                if "=" not in text:
                    raise DataError(f"{path}:{lineno}: expected key=value, got {text!r}")
                key, raw = (part.strip() for part in text.split("=", 1))
                where = f"{path}:{lineno}"
                _check_key(key, where)
                values[key] = _parse_value(key, raw, where)
    for item in overrides or []:
        if "=" not in item:
            raise DataError(f"override {item!r}: expected key=value")
        key, raw = (part.strip() for part in item.split("=", 1))
        _check_key(key, f"override {item!r}")
        values[key] = _parse_value(key, raw, f"override {item!r}")
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid configuration: {exc}") from None


def snapshot(cfg: RunConfig) -> str:
    """Canonical text form; `parse_config` on it reproduces `cfg` exactly."""
    lines = []
    for key, value in sorted(asdict(cfg).items()):
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
