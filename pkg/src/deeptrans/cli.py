"""Command-line interface.

Subcommands: train, decode, gradcheck, params, sweep, lr-plot.
Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numeric failure.
Set DEEPTRANS_LOG=debug|info|warning to control verbosity (default info).
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys

import numpy as np

from .config import RunConfig, parse_config, snapshot
from .data import Vocabulary, build_corpus, write_parallel
from .decoding import beam_search, bleu4, exact_match, greedy_decode, token_accuracy
from .errors import ContractError, DataError, NumericError
from .model import Seq2SeqModel, uniform_depth_config
from .training import gradient_check, init_params, lr_schedule, train_loop

log = logging.getLogger("deeptrans")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _setup_logging() -> None:
    level = os.environ.get("DEEPTRANS_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(message)s", stream=sys.stderr, force=True)


def _load_config(args) -> RunConfig:
    return parse_config(args.config, args.set or [])


def _build(cfg: RunConfig):
    corpus = build_corpus(cfg.task_spec())
    model = Seq2SeqModel(cfg.model_config(len(corpus.src_vocab), len(corpus.tgt_vocab)))
    return corpus, model


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    corpus, model = _build(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    cfg.src_vocab_hash = corpus.src_vocab.digest()
    cfg.tgt_vocab_hash = corpus.tgt_vocab.digest()
    corpus.src_vocab.save(os.path.join(cfg.out_dir, "vocab.src.txt"))
    corpus.tgt_vocab.save(os.path.join(cfg.out_dir, "vocab.tgt.txt"))
    with open(os.path.join(cfg.out_dir, "config.resolved"), "w", encoding="utf-8") as f:
        f.write(snapshot(cfg))
    write_parallel(corpus.test, corpus.src_vocab,
                   os.path.join(cfg.out_dir, "test.src.txt"),
                   os.path.join(cfg.out_dir, "test.tgt.txt"))
    result = train_loop(model, corpus, cfg.train_config(), out_dir=cfg.out_dir,
                        resume=args.resume, log=log.info)
    if result.aborted:
        log.error("training aborted on non-finite values; last checkpoint kept")
        return 3
    log.info(f"finished after {result.steps_run} steps; "
             f"final {cfg.val_metric} {result.final_metric:.4f} "
             f"(best {result.best_metric:.4f})")
    print(f"{result.steps_run}\t{result.final_metric:.6f}\t{result.best_metric:.6f}")
    return 0


def _load_run(model_dir: str):
    cfg = parse_config(os.path.join(model_dir, "config.resolved"))
    src_vocab = Vocabulary.load(os.path.join(model_dir, "vocab.src.txt"))
    tgt_vocab = Vocabulary.load(os.path.join(model_dir, "vocab.tgt.txt"))
    if cfg.src_vocab_hash and src_vocab.digest() != cfg.src_vocab_hash:
        raise DataError(f"source vocab hash mismatch: checkpoint {cfg.src_vocab_hash}, "
                        f"file {src_vocab.digest()}")
    if cfg.tgt_vocab_hash and tgt_vocab.digest() != cfg.tgt_vocab_hash:
        raise DataError(f"target vocab hash mismatch: checkpoint {cfg.tgt_vocab_hash}, "
                        f"file {tgt_vocab.digest()}")
    model = Seq2SeqModel(cfg.model_config(len(src_vocab), len(tgt_vocab)))
    model.load(os.path.join(model_dir, "model.dtck"))
    return cfg, model, src_vocab, tgt_vocab


def cmd_decode(args) -> int:
    _, model, src_vocab, tgt_vocab = _load_run(args.model_dir)
    with open(args.input, encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f]
    outputs = []
    for line in lines:
        words = line.split()
        if not words:
            outputs.append("")
            continue
        src = src_vocab.encode(words)
        if args.beam == 1:
            tokens = greedy_decode(model, src, max_len=args.max_len)
        else:
            tokens, _, _ = beam_search(model, src, beam_size=args.beam,
                                       alpha=args.alpha, max_len=args.max_len,
                                       norm=args.norm)
        outputs.append(" ".join(tgt_vocab.decode(tokens)))
    with open(args.output, "w", encoding="utf-8") as f:
        for line in outputs:
            f.write(line + "\n")
    log.info(f"decoded {len(outputs)} line(s) -> {args.output}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _load_config(args)
    if cfg.hidden_dim > 8:
        raise ContractError(f"gradcheck is for toy dims (hidden_dim <= 8), "
                            f"got {cfg.hidden_dim}")
    corpus, model = _build(cfg)
    init_params(model, cfg.seed, cfg.init_range)
    pairs = sorted(corpus.train, key=lambda p: (len(p[0]), p[0]))[: args.sentences]
    report = gradient_check(model, pairs, eps=args.eps)
    worst = 0.0
    for name, err in report:
        print(f"{name}\t{err:.3e}")
        worst = max(worst, err)
    print(f"TOTAL\t{worst:.3e}\t{'PASS' if worst < args.tolerance else 'FAIL'}")
    return 0 if worst < args.tolerance else 3


def cmd_params(args) -> int:
    cfg = _load_config(args)
    corpus, model = _build(cfg)
    groups: dict[str, int] = {}
    for name, tensor in model.named_params():
        head = name.split(".")[0]
        groups[head] = groups.get(head, 0) + tensor.data.size
    for head, count in groups.items():
        print(f"{head}\t{count}")
    print(f"total\t{model.num_params()}")
    return 0


def _sweep_variants(cfg: RunConfig, axis: str) -> list[tuple[str, dict]]:
    if axis == "depth":
        return [(f"depth{k}", {"depth": k}) for k in range(5)]
    if axis == "cell":
        return [("gru", {"bottom_cell": "gru"}), ("lgru", {"bottom_cell": "lgru"})]
    if axis == "ablation":
        return [("full", {}),
                ("no_enc", {"enc_transition": False}),
                ("no_query", {"query_transition": False}),
                ("no_dec", {"dec_transition": False})]
    if axis == "pe":
        depths = sorted({0, max(cfg.enc_depth, 1)})
        out = []
        for k in depths:
            for pe in (False, True):
                out.append((f"depth{k}_pe_{'on' if pe else 'off'}",
                            {"depth": k, "positional_encoding": pe}))
        return out
    raise DataError(f"unknown sweep axis {axis!r}")


def cmd_sweep(args) -> int:
    base = _load_config(args)
    variants = _sweep_variants(base, args.axis)
    os.makedirs(base.out_dir, exist_ok=True)
    out_path = os.path.join(base.out_dir, f"sweep_{args.axis}.tsv")
    rows = ["variant\tstatus\tval_metric"]
    for name, changes in variants:
        cfg = parse_config(args.config, (args.set or []) +
                           [f"{k}={v}" for k, v in changes.items()])
        try:
            corpus, model = _build(cfg)
            result = train_loop(model, corpus, cfg.train_config(), log=log.debug)
            status = "aborted" if result.aborted else "ok"
            rows.append(f"{name}\t{status}\t{result.final_metric:.6f}")
            log.info(f"sweep {name}: {status} {result.final_metric:.4f}")
        except Exception as exc:  # member failure must not kill the sweep
            rows.append(f"{name}\tfailed\tnan")
            log.error(f"sweep {name} failed: {exc}")
    with open(out_path, "w", encoding="utf-8") as f:
        f.write("\n".join(rows) + "\n")
    print(out_path)
    return 0


def cmd_lr_plot(args) -> int:
    cfg = _load_config(args)
    tcfg = cfg.train_config()
    last = args.max_step if args.max_step is not None else tcfg.decay_end
    steps = np.unique(np.linspace(0, last, args.points).round().astype(int))
    lines = ["step\tlr"]
    lines += [f"{t}\t{lr_schedule(int(t), tcfg):.17g}" for t in steps]
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deeptrans",
                     description="Deep-transition recurrent seq2seq toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a synthetic task")
    _add_config_args(p)
    p.add_argument("-o", "--out-dir", default=None)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("decode", help="decode an input file with a trained model")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.6)
    p.add_argument("--norm", choices=("gnmt", "length"), default="gnmt")
    p.add_argument("--max-len", type=int, default=None)
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    _add_config_args(p)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--sentences", type=int, default=2)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("params", help="parameter count per component")
    _add_config_args(p)
    p.set_defaults(fn=cmd_params)

    p = sub.add_parser("sweep", help="train a matrix of model variants")
    _add_config_args(p)
    p.add_argument("--axis", choices=("depth", "cell", "ablation", "pe"),
                   required=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("lr-plot", help="dump the learning-rate schedule as TSV")
    _add_config_args(p)
    p.add_argument("--points", type=int, default=101)
    p.add_argument("--max-step", type=int, default=None)
    p.add_argument("--output", default=None)
    p.set_defaults(fn=cmd_lr_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        log.error(f"usage error: {exc}")
        return 1
    except (DataError, ContractError) as exc:
        log.error(str(exc))
        return 2
    except NumericError as exc:
        log.error(f"numeric failure: {exc}")
        return 3
    except OSError as exc:
        log.error(str(exc))
        return 2


if __name__ == "__main__":
    sys.exit(main())
