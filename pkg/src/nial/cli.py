"""Command-line entry point: train, evaluate, benchmark-lr, gen-synth.

Failures exit nonzero after printing one line ``error: <category>: <message>``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import data as D
from .errors import NialError
from .runner import SynthSpec, benchmark_lr, evaluate, gen_synth, load_config, train


def _train(args) -> dict:
    config = load_config(args.config, args.set)
    result = train(config)
    summary = {
        "epochs_run": len(result.records),
        "best_val_loss": result.best_val_loss,
        "paths": result.paths,
    }
    if result.records:
        last = result.records[-1]
        summary.update(val_loss=last.val_loss, val_accuracy=last.val_accuracy, val_f1=last.val_f1, lr=last.lr)
    if result.test_report is not None:
        summary["test"] = result.test_report.to_dict()
    return summary


def _evaluate(args) -> dict:
    ds = D.load_csv(args.data)
    report = evaluate(args.checkpoint, ds, normalize=not args.no_normalize, standardize=args.standardize)
    return report.to_dict()


def _benchmark(args) -> dict:
    config = load_config(args.config, args.set)
    return benchmark_lr(config, args.loss_threshold).to_dict()


def _gen_synth(args) -> dict:
    spec = SynthSpec(classes=args.classes, per_class=args.per_class, length=args.len, noise=args.noise,
                     seed=args.seed)
    ds = gen_synth(spec, args.out)
    return {"path": args.out, "rows": len(ds), "length": ds.length, "classes": ds.n_classes}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nial", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a CSV dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--no-normalize", action="store_true", help="skip per-beat min-max scaling")
    p.add_argument("--standardize", action="store_true", help="apply per-beat z-scoring")
    p.set_defaults(func=_evaluate)

    p = sub.add_parser("benchmark-lr", help="adaptive vs static lr from identical initialization")
    p.add_argument("--config", required=True)
    p.add_argument("--loss-threshold", type=float, required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=_benchmark)

    p = sub.add_parser("gen-synth", help="write a synthetic heartbeat CSV")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--len", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_gen_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        out = args.func(args)
    except NialError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: value: {exc}", file=sys.stderr)
        return 1
    json.dump(out, sys.stdout, indent=2, default=str)
    sys.stdout.write("\n")
    return 0
