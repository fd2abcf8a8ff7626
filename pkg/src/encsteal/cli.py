"""Command line entry point.

Every subcommand takes ``--config``, ``--seed`` and ``--out``. Stage commands
(``pretrain``, ``steal``, ``probe``, ``eval``) resume from artifacts already in
the output directory, so they can be chained; ``run`` always starts fresh.
Failures print ``error: [phase] ...`` to stderr and exit with status 1
(status 2 for usage errors).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import load_config
from .evaluation import export_embeddings
from .exceptions import EncStealError, ExperimentError
from .harness import Experiment, run_grid

STAGES = {"pretrain": "pretrain", "steal": "attack", "eval": "eval"}


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment config (YAML)")
    common.add_argument("--seed", type=int, default=None, help="override every training/eval seed")
    common.add_argument("--out", default=None, help="output directory (default: output.dir from the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="encsteal", description="Encoder pretraining and stealing experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("pretrain", parents=[common], help="pretrain the target encoder")
    sub.add_parser("steal", parents=[common], help="run the stealing attack against the target")
    sub.add_parser("probe", parents=[common], help="train linear probes on the available encoders")
    sub.add_parser("eval", parents=[common], help="compute agreement and accuracy on the test split")
    sub.add_parser("run", parents=[common], help="full pipeline from scratch")
    grid = sub.add_parser("grid", parents=[common], help="run the config's grid (Cartesian product of overrides)")
    grid.add_argument("--workers", type=int, default=1)
    export = sub.add_parser("export-embeddings", parents=[common], help="write embeddings as CSV")
    export.add_argument("--encoder", choices=("target", "surrogate"), default="target")
    export.add_argument("--split", choices=("test", "train", "surrogate"), default="test")
    return parser


def _export(exp, args):
    until = "pretrain" if args.encoder == "target" else "attack"
    exp.run(until)
    try:
        encoder = exp.target if args.encoder == "target" else exp.result.surrogate
        ds = {"test": exp.test, "train": exp.train, "surrogate": exp.surrogate_ds}[args.split]
        path = os.path.join(exp.out_dir, f"embeddings_{args.encoder}_{args.split}.csv")
        export_embeddings(encoder, ds, path)
    except Exception as exc:
        raise ExperimentError("export", exc) from exc
    return path


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        try:
            cfg = load_config(args.config)
            if args.seed is not None:
                cfg = cfg.with_seed(args.seed)
        except (OSError, EncStealError) as exc:
            raise ExperimentError("config", exc) from exc
        out = args.out or cfg.output.dir

        if args.command == "grid":
            reports, errors = run_grid(cfg, out_dir=out, workers=args.workers)
            print(os.path.join(out, "summary.csv"))
            for i, err in errors.items():
                print(f"cell {i}: {err}", file=sys.stderr)
            return 1 if errors else 0

        try:
            exp = Experiment(cfg, out, resume=args.command != "run")
        except EncStealError as exc:
            raise ExperimentError("resume", exc) from exc
        if args.command == "export-embeddings":
            print(_export(exp, args))
            return 0
        if args.command == "probe":
            until = "probe-surrogate" if "attack" in exp.report.completed else "probe-target"
        else:
            until = STAGES.get(args.command, "eval")
        report = exp.run(until)
        summary = {"run_id": report.run_id, "completed": report.completed, "queries": report.query_count}
        if report.surrogate_eval is not None:
            summary.update(agreement=report.surrogate_eval.agreement, accuracy=report.surrogate_eval.accuracy)
        print(json.dumps(summary))
        return 0
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
