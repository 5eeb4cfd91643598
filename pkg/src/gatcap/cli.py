"""Command-line interface: ``gatcap {gen,train,eval,caption,ablate,gradcheck}``.

Exit codes: 0 success, 1 check failure, 2 usage or validation error,
3 numerical abort, 4 artifact mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from .config import ConfigError, ModelConfig, TrainConfig, apply_overrides, parse_kv, split_config

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC, EXIT_MISMATCH = 0, 1, 2, 3, 4

log = logging.getLogger("gatcap")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- helpers

def _thread_limit():
    raw = os.environ.get("GAT_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
    except ValueError:
        raise CliError(f"GAT_THREADS must be a positive integer, got {raw!r}")
    if n < 1:
        raise CliError(f"GAT_THREADS must be a positive integer, got {raw!r}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _load_config(args) -> tuple:
    """(ModelConfig, TrainConfig) from defaults, then ``--config``, then ``--set`` and flags."""
    values = {}
    if getattr(args, "config", None):
        try:
            values.update(parse_kv(Path(args.config).read_text()))
        except OSError as exc:
            raise CliError(f"cannot read config: {exc}")
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    for flag, key in (("mode_geometry", "mode_geometry"), ("mode_position", "mode_position"),
                      ("glu", "glu_placement"), ("epochs", "epochs"), ("lr", "lr"), ("seed", "seed")):
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = str(v)
    try:
        model_vals, train_vals = split_config(values)
        return apply_overrides(ModelConfig(), model_vals), apply_overrides(TrainConfig(), train_vals)
    except (ConfigError, TypeError) as exc:
        raise CliError(str(exc))


def _load_data(path):
    from .scenes import load_jsonl

    try:
        pairs = load_jsonl(path)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot read dataset {path}: {exc}")
    if not pairs:
        raise CliError(f"dataset {path} is empty")
    return pairs


def _load_ckpt(path):
    from .checkpoint import CheckpointError, read_checkpoint

    try:
        ck = read_checkpoint(path)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint: {exc}")
    except CheckpointError as exc:
        raise CliError(f"invalid checkpoint {path}: {exc}", EXIT_MISMATCH)
    if ck.vocab is None:
        raise CliError(f"checkpoint {path} carries no vocabulary", EXIT_MISMATCH)
    return ck


def _checked_vocab(pairs, ck):
    from .experiment import VocabMismatch, check_vocab

    try:
        check_vocab(pairs, ck.vocab)
    except VocabMismatch as exc:
        raise CliError(str(exc), EXIT_MISMATCH)


def _write(path, text: str) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}")


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    from .scenes import GenerationError, dumps_jsonl, generate
    from .experiment import build_vocab

    if args.scenes < 1:
        raise CliError("--scenes must be >= 1")
    lo, hi = args.objects
    try:
        pairs = generate(args.seed, args.scenes, (lo, hi), d=args.d, noise_sigma=args.noise,
                         relation_bias=args.relation_bias)
    except (ValueError, GenerationError) as exc:
        raise CliError(str(exc))
    _write(args.out, dumps_jsonl(pairs))
    print(f"scenes={len(pairs)} vocab={len(build_vocab(pairs))} out={args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .checkpoint import save_checkpoint
    from .experiment import build_vocab, fit
    from .plotting import plot_training_curves
    from .training import TrainingDiverged

    cfg, tcfg = _load_config(args)
    pairs = _load_data(args.data)
    vocab = build_vocab(pairs)
    # the data fixes the input width and the vocabulary size
    cfg = replace(cfg, d=pairs[0].regions.appearance.shape[1], V=len(vocab))
    log.info("training %d scenes, V=%d, %d epochs", len(pairs), len(vocab), tcfg.epochs)
    try:
        params, report = fit(pairs, vocab, cfg, tcfg,
                             on_epoch=lambda s: print(f"epoch {s.epoch} loss {s.loss:.4f} "
                                                      f"acc {s.token_accuracy:.4f}", flush=True))
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out = Path(args.out_ckpt)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(params, cfg, out, vocab)
    except OSError as exc:
        raise CliError(f"cannot write checkpoint: {exc}")
    rep = report.to_dict()
    rep["final_loss"] = report.final_loss
    rep["final_token_accuracy"] = report.final_accuracy
    _write(out.with_suffix(out.suffix + ".report.json"), json.dumps(rep, indent=2) + "\n")
    if not args.no_figures:
        plot_training_curves(rep["epochs"], out.with_suffix(out.suffix + ".loss.png"))
    print(f"checkpoint={out} final_loss={report.final_loss:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import metrics
    from .experiment import evaluate
    from .plotting import plot_scores

    ck = _load_ckpt(args.ckpt)
    pairs = _load_data(args.data)
    _checked_vocab(pairs, ck)
    res = evaluate(pairs, ck.params, ck.config, ck.vocab, args.beam)
    extra = {} if res.spatial_accuracy is None else {"spatial_accuracy": res.spatial_accuracy}
    table = metrics.format_table(res.scores, extra)
    print("=== scores ===")
    print(table)
    print("=== end ===")
    if args.report:
        _write(args.report, json.dumps(res.to_dict(), indent=2) + "\n")
        if not args.no_figures:
            plot_scores({k: s.per_instance for k, s in res.scores.items()},
                        Path(args.report).with_suffix(".png"))
    return EXIT_OK


def cmd_caption(args) -> int:
    from .experiment import caption_all

    ck = _load_ckpt(args.ckpt)
    pairs = _load_data(args.data)
    if args.index is not None:
        if not 0 <= args.index < len(pairs):
            raise CliError(f"--index {args.index} outside [0, {len(pairs)})")
        pairs = [pairs[args.index]]
    for cap in caption_all(pairs, ck.params, ck.config, ck.vocab, args.beam):
        print(" ".join(cap))
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .experiment import MODULE_ROWS, STRATEGY_ROWS, ordering_check, run_ablation
    from .plotting import plot_ablation

    cfg, tcfg = _load_config(args)
    pairs = _load_data(args.data)
    n_train = args.train if args.train is not None else int(round(len(pairs) * 5 / 6))
    if not 1 <= n_train < len(pairs):
        raise CliError(f"--train must leave at least one test scene (dataset has {len(pairs)})")
    if args.seeds < 1:
        raise CliError("--seeds must be >= 1")
    extra = [v for v in STRATEGY_ROWS if v not in ("GLU(enc.)", "Geometry Q&K concat.")]
    variants = {"modules": MODULE_ROWS, "strategies": STRATEGY_ROWS,
                "all": MODULE_ROWS + extra}[args.variants]
    start = time.perf_counter()
    result = run_ablation(pairs[:n_train], pairs[n_train:], cfg, tcfg, list(range(args.seeds)), variants,
                          beam=args.beam,
                          progress=lambda r: print(f"# {r.variant} seed {r.seed}: spatial "
                                                   f"{r.spatial_accuracy:.3f} ({r.seconds:.0f}s)", flush=True))
    print("=== ablation ===")
    print(result.markdown())
    print("=== end ===")
    summary = {"elapsed_seconds": time.perf_counter() - start}
    if set(MODULE_ROWS) <= set(result.variants()):
        summary["ordering"] = ordering_check(result)
        for k, ok in summary["ordering"].items():
            print(f"ordering {k}: {'yes' if ok else 'no'}")
    if {"GLU(enc.)", "GLU(enc. and dec.)"} <= set(result.variants()) or \
            {"Full: GAT", "GLU(enc. and dec.)"} <= set(result.variants()):
        enc = "GLU(enc.)" if "GLU(enc.)" in result.variants() else "Full: GAT"
        diff = result.mean(enc) - result.mean("GLU(enc. and dec.)")
        summary["glu_enc_minus_enc_dec"] = diff
        print(f"GLU(enc.) - GLU(enc. and dec.) spatial: {100 * diff:+.1f} points")
    if args.out_md:
        _write(args.out_md, result.markdown() + "\n")
    if args.out_json:
        _write(args.out_json, json.dumps({**result.to_dict(), **summary}, indent=2) + "\n")
    if args.figure:
        plot_ablation({v: result.values(v) for v in result.variants()}, args.figure)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    start = time.perf_counter()
    results = run_suite(args.seed, corrupt_op=args.corrupt_op, only=args.only)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(r.describe())
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {time.perf_counter() - start:.1f}s")
    if failed:
        print("failed: " + ", ".join(r.name for r in failed), file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _objects(raw: str) -> tuple:
    try:
        lo, hi = (int(x) for x in raw.split(",")) if "," in raw else (int(raw), int(raw))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or MIN,MAX, got {raw!r}")
    return lo, hi


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config entry")
    p.add_argument("--mode-geometry", dest="mode_geometry", choices=["off", "concat", "add"])
    p.add_argument("--mode-position", dest="mode_position", choices=["sinusoidal", "lstm"])
    p.add_argument("--glu", choices=["none", "enc", "enc_dec"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gatcap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic scene dataset (JSONL)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--d", type=int, default=32, help="appearance feature dimension")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--objects", type=_objects, default=(2, 2), help="objects per scene, N or MIN,MAX")
    p.add_argument("--relation-bias", dest="relation_bias", type=float, default=0.0,
                   help="probability a scene uses its category pair's preferred relation")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a captioner and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out-ckpt", dest="out_ckpt", required=True)
    p.add_argument("--no-figures", dest="no_figures", action="store_true")
    _model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="decode a dataset and score it")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--report", help="JSON score report path (a histogram PNG is written beside it)")
    p.add_argument("--no-figures", dest="no_figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("caption", help="print generated captions")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--index", type=int)
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("ablate", help="train and compare the architecture variants")
    p.add_argument("--data", required=True)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--train", type=int, help="number of leading scenes used for training")
    p.add_argument("--variants", choices=["modules", "strategies", "all"], default="modules")
    p.add_argument("--beam", type=int, default=1)
    p.add_argument("--out-md", dest="out_md")
    p.add_argument("--out-json", dest="out_json")
    p.add_argument("--figure", help="bar chart PNG of spatial accuracy per variant")
    _model_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", help="run only checks whose name contains this text")
    p.add_argument("--corrupt-op", dest="corrupt_op", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _validate(args) -> None:
    beam = getattr(args, "beam", None)
    if beam is not None and beam < 1:
        raise CliError("--beam must be >= 1")
    epochs = getattr(args, "epochs", None)
    if epochs is not None and epochs < 1:
        raise CliError("--epochs must be >= 1")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _validate(args)
        with _thread_limit():
            return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
