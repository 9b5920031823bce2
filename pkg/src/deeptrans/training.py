"""Optimization: Adam, the warmup/exponential-decay schedule, parameter
initialization, the training loop and the finite-difference gradient
check harness.

The learning rate at step t with n concurrent replicas follows

    lr = lr0 * min(1 + t*(n-1)/(n*p),  n,  n*(2n)^((s - n*t)/(e - s)))

with p warmup steps and exponential decay between steps s and e. At
n = 1 this is a constant lr0 until s, then a smooth decay that halves
the rate at t = e.

Every stochastic choice is derived from (seed, step) via counter-style
seed sequences, so a run is replayable from any checkpoint: resuming
reproduces the uninterrupted run bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .checkpoint import load_tensors, save_tensors
from .data import Corpus, epoch_order, make_batches
from .decoding import bleu4, greedy_decode, token_accuracy
from .errors import ContractError, NumericError
from .model import EOS, Seq2SeqModel
from .tensor import Tape, Tensor, finite_checks


@dataclass
class TrainConfig:
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
    patience: int = 0               # 0 disables early stopping
    val_interval: int = 200
    val_metric: str = "accuracy"    # accuracy | bleu
    clip_norm: float = 5.0          # 0 disables clipping
    seed: int = 1

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ContractError("warmup_steps must be positive")
        if not 0 < self.decay_start < self.decay_end:
            raise ContractError("need 0 < decay_start < decay_end")
        if self.replicas < 1:
            raise ContractError("replicas must be >= 1")
        if self.val_metric not in ("accuracy", "bleu"):
            raise ContractError(f"unknown validation metric {self.val_metric!r}")
        if self.max_steps < 1 or self.val_interval < 1:
            raise ContractError("max_steps and val_interval must be positive")


def lr_schedule(t: int, cfg: TrainConfig) -> float:
    if t < 0:
        raise ContractError("step must be >= 0")
    n, p, s, e = cfg.replicas, cfg.warmup_steps, cfg.decay_start, cfg.decay_end
    warm = 1.0 + t * (n - 1) / (n * p)
    decay = n * (2.0 * n) ** ((s - n * t) / (e - s))
    return cfg.lr0 * min(warm, float(n), decay)


def init_params(model: Seq2SeqModel, seed: int, init_range: float = 0.08) -> None:
    """Uniform weights in [-init_range, init_range]; norm gains 1, biases 0."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(0,))))
    for name, t in model.named_params():
        if name.endswith(".gain"):
            t.data = np.ones_like(t.data)
        elif name.endswith(".bias"):
            t.data = np.zeros_like(t.data)
        else:
            t.data = rng.uniform(-init_range, init_range, size=t.data.shape)
        t.grad = None


class AdamState:
    """First/second moment estimates plus the shared step counter."""

    def __init__(self, named_params):
        self.m = {name: np.zeros_like(t.data) for name, t in named_params}
        self.v = {name: np.zeros_like(t.data) for name, t in named_params}
        self.t = 0


def adam_step(named_params, grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-6) -> None:
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, tensor in named_params:
        g = grads[name]
        if not math.isfinite(g.sum()):
            raise NumericError(f"non-finite gradient for parameter {name}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        tensor.data = tensor.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def collect_grads(model: Seq2SeqModel) -> dict[str, np.ndarray]:
    return {name: (t.grad.data if t.grad is not None else np.zeros_like(t.data))
            for name, t in model.named_params()}


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients by max_norm/norm when the global norm exceeds it."""
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0.0 and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


def batch_loss(model: Seq2SeqModel, batch, train: bool = False, rng=None,
               weight: float = 1.0) -> Tensor:
    """Mean of per-sentence mean losses, optionally scaled (for sharding)."""
    total = None
    for src, tgt in batch:
        _, loss = model.forward_teacher_forced(src, tgt + [EOS], train, rng)
        total = loss if total is None else total + loss
    return T.scale(total, weight / len(batch))


class StepRng:
    """Per-step dropout generator derived from (seed, step); replayable."""

    def __init__(self, seed: int):
        self.seed = seed

    def at(self, step: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(self.seed, spawn_key=(2, step))))


@dataclass
class TrainResult:
    steps_run: int
    final_metric: float
    best_metric: float
    stopped_early: bool
    aborted: bool = False


def evaluate(model: Seq2SeqModel, pairs, metric: str = "accuracy") -> float:
    hyps = [greedy_decode(model, src) for src, _ in pairs]
    refs = [tgt for _, tgt in pairs]
    if metric == "bleu":
        return bleu4(hyps, refs)
    return token_accuracy(hyps, refs)


def train_loop(model: Seq2SeqModel, corpus: Corpus, cfg: TrainConfig,
               out_dir=None, resume: bool = False, log=None) -> TrainResult:
    """Run optimization; writes metrics.tsv / model.dtck / optim.dtck in out_dir.

    Aborts (keeping the last written checkpoint) if the loss or any
    gradient goes non-finite. Early stopping starts from a best metric
    of 0.0 and triggers after `patience` validations without strict
    improvement.
    """
    if not corpus.train:
        raise ContractError("training corpus is empty")
    batches = make_batches(corpus.train, cfg.batch_tokens)
    nb = len(batches)
    named = model.named_params()
    state = AdamState(named)
    step_rng = StepRng(cfg.seed)
    start_step, best_metric, strikes = 0, 0.0, 0
    loss_sum, loss_count = 0.0, 0
    metrics_rows: list[str] = []

    model_path = optim_path = metrics_path = None
    if out_dir is not None:
        import os
        os.makedirs(out_dir, exist_ok=True)
        model_path = os.path.join(out_dir, "model.dtck")
        optim_path = os.path.join(out_dir, "optim.dtck")
        metrics_path = os.path.join(out_dir, "metrics.tsv")

    if resume:
        if out_dir is None:
            raise ContractError("resume requires an output directory")
        model.load(model_path)
        stored = load_tensors(optim_path)
        for name, _ in named:
            state.m[name] = stored[f"adam.m.{name}"].reshape(state.m[name].shape)
            state.v[name] = stored[f"adam.v.{name}"].reshape(state.v[name].shape)
        state.t = int(stored["adam.t"][()])
        start_step = int(stored["train.step"][()])
        best_metric = float(stored["train.best_metric"][()])
        strikes = int(stored["train.strikes"][()])
        with open(metrics_path, encoding="utf-8") as f:
            metrics_rows = f.read().splitlines()[1:]
    else:
        init_params(model, cfg.seed, cfg.init_range)

    def write_outputs(step_done: int):
        if out_dir is None:
            return
        model.save(model_path)
        optim = {f"adam.m.{n}": state.m[n] for n, _ in named}
        optim.update({f"adam.v.{n}": state.v[n] for n, _ in named})
        optim["adam.t"] = np.asarray(float(state.t))
        optim["train.step"] = np.asarray(float(step_done))
        optim["train.best_metric"] = np.asarray(best_metric)
        optim["train.strikes"] = np.asarray(float(strikes))
        save_tensors(optim_path, optim)
        with open(metrics_path, "w", encoding="utf-8") as f:
            f.write("step\tlr\ttrain_loss\tval_metric\n")
            for row in metrics_rows:
                f.write(row + "\n")

    epoch_cache: dict[int, np.ndarray] = {}
    stopped_early = False
    step = start_step
    metric = best_metric
    while step < cfg.max_steps:
        epoch, k = divmod(step, nb)
        if epoch not in epoch_cache:
            epoch_cache.clear()
            epoch_cache[epoch] = epoch_order(nb, cfg.seed, epoch)
        batch = batches[int(epoch_cache[epoch][k])]
        lr = lr_schedule(step, cfg)
        rng = step_rng.at(step)
        model.zero_grad()
        try:
            shards = np.array_split(np.arange(len(batch)), cfg.replicas)
            loss_value = 0.0
            for shard in shards:
                if len(shard) == 0:
                    continue
                part = [batch[i] for i in shard]
                with Tape() as tape:
                    loss = batch_loss(model, part, train=True, rng=rng,
                                      weight=len(part) / len(batch))
                tape.backward(loss)
                loss_value += loss.item()
            grads = collect_grads(model)
            clip_gradients(grads, cfg.clip_norm)
            adam_step(named, grads, state, lr,
                      cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        except NumericError as exc:
            if log:
                log(f"aborting at step {step}: {exc}")
            write_outputs(step)
            return TrainResult(step, metric, best_metric, stopped_early, aborted=True)
        loss_sum += loss_value
        loss_count += 1
        step += 1
        if step % cfg.val_interval == 0 or step == cfg.max_steps:
            metric = evaluate(model, corpus.valid, cfg.val_metric)
            mean_loss = loss_sum / max(loss_count, 1)
            loss_sum, loss_count = 0.0, 0
            metrics_rows.append(f"{step}\t{lr:.12g}\t{mean_loss:.12g}\t{metric:.12g}")
            if log:
                log(f"step {step}  lr {lr:.3g}  loss {mean_loss:.4f}  "
                    f"{cfg.val_metric} {metric:.4f}")
            if metric > best_metric:
                best_metric = metric
                strikes = 0
            else:
                strikes += 1
            write_outputs(step)
            if cfg.patience > 0 and strikes >= cfg.patience:
                stopped_early = True
                break
    if out_dir is not None and not metrics_rows:
        write_outputs(step)
    return TrainResult(step, metric, best_metric, stopped_early)


# ---------------------------------------------------------------------------
# gradient checking


def rel_error(a: float, b: float, floor: float = 1e-3) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def gradient_check(model: Seq2SeqModel, batch, eps: float = 1e-4,
                   floor: float = 1e-3) -> list[tuple[str, float]]:
    """Compare autodiff gradients against central finite differences.

    Returns (name, max relative error) per parameter tensor. The
    relative error denominator is floored to ignore noise on gradients
    far below the finite-difference resolution.
    """
    model.zero_grad()
    with Tape() as tape:
        loss = batch_loss(model, batch)
    tape.backward(loss)
    grads = collect_grads(model)

    def loss_value() -> float:
        # probe evaluations skip per-op finite checks for speed; a NaN
        # would still surface as a failed comparison
        with finite_checks(False):
            return batch_loss(model, batch).item()

    report = []
    for name, tensor in model.named_params():
        flat = tensor.data.reshape(-1)
        g = grads[name].reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_value()
            flat[i] = orig - eps
            down = loss_value()
            flat[i] = orig
            fd = (up - down) / (2.0 * eps)
            worst = max(worst, rel_error(fd, g[i], floor))
        report.append((name, worst))
    return report
