"""Command-line entry point: ``graphkd <command> [flags]``.

Exit codes: 0 success, 2 usage or configuration error, 3 training failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .data import DatasetError
from .distill import TrainingDiverged
from .experiment import (
    RunSpec,
    UsageError,
    cmd_baseline,
    cmd_distill,
    cmd_export_graphs,
    cmd_param_report,
    cmd_train_teacher,
)
from .losses import LOSS_KINDS
from .models import ConfigError
from .report import ReportError, text_summary

EXIT_OK, EXIT_USAGE, EXIT_TRAINING = 0, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    # every default is None so that only explicit flags override the config file
    p.add_argument("--config", help="JSON run spec; explicit flags take precedence")
    p.add_argument("--dataset-root", help="directory holding NAME/NAME_A.txt etc. (env DFAD_DATA_ROOT)")
    p.add_argument("--dataset", help="dataset name, e.g. MUTAG")
    p.add_argument("--feature-policy", choices=["node-label-onehot", "degree-onehot", "constant"])
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--folds", type=int, nargs="+", help="fold indices to run (default: all)")
    p.add_argument("--num-folds", type=int)
    p.add_argument("--workers", type=int, help="parallel fold workers (default 1)")


def _model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--family", choices=["GIN", "GCN", "SAGE", "GRAPHSAGE", "GAT"])
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--heads", type=int)


def _training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--teacher-dir", help="directory with teacher_fold{i}.npz checkpoints")
    p.add_argument("--loss", nargs="+", help=f"one or more of {', '.join(LOSS_KINDS)}")
    p.add_argument("--epochs", type=int)
    p.add_argument("--iters-per-epoch", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--k", type=int, help="student steps per generator step")
    p.add_argument("--tau", type=float)
    p.add_argument("--gen-nodes", nargs="+", help="N per run: integer, 'avg' or 'avg*F'")
    p.add_argument("--edge-mode", choices=["hard-st", "soft"])
    p.add_argument("--student-lr", type=float)
    p.add_argument("--gen-lr", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphkd", description="Data-free distillation of graph classifiers.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-teacher", help="train one teacher per fold")
    _common(p)
    _model(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--teacher-lr", type=float)

    p = sub.add_parser("distill", help="adversarial data-free distillation per fold")
    _common(p)
    _model(p)
    _training(p)

    p = sub.add_parser("baseline", help="KD on real data or the untrained-generator baseline")
    _common(p)
    _model(p)
    _training(p)
    p.add_argument("--which", choices=["kd", "random"])
    p.add_argument("--fraction", type=float, nargs="+", help="real-data fractions for kd")

    p = sub.add_parser("export-graphs", help="sample graphs from a generator checkpoint")
    p.add_argument("--config")
    p.add_argument("--generator", help="generator checkpoint (.npz)")
    p.add_argument("--count", type=int)
    p.add_argument("--format", help="dot or jsonl")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("param-report", help="parameter counts of teacher and student")
    p.add_argument("--config")
    p.add_argument("--teacher-model", help="FAMILY-LAYERS-HIDDEN, e.g. GIN-5-128")
    p.add_argument("--student-model", help="FAMILY-LAYERS-HIDDEN, e.g. GIN-5-32")
    p.add_argument("--input-dim", type=int, help="feature width T (default: from dataset, else 7)")
    p.add_argument("--dataset-root")
    p.add_argument("--dataset")
    p.add_argument("--out")
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "verbose", "command")}
    try:
        spec = RunSpec.resolve(args.command, flags, args.config)
        if spec.command == "train-teacher":
            print(text_summary(cmd_train_teacher(spec)), end="")
        elif spec.command == "distill":
            for report in cmd_distill(spec):
                print(text_summary(report))
        elif spec.command == "baseline":
            for report in cmd_baseline(spec):
                print(text_summary(report))
        elif spec.command == "export-graphs":
            paths = cmd_export_graphs(spec)
            print(f"wrote {len(paths)} file(s) to {spec.out}")
        else:
            table = cmd_param_report(spec)
            print(table, end="")
            if args.out:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                (Path(args.out) / "params.txt").write_text(table)
    except TrainingDiverged as exc:
        print(f"error: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (UsageError, ConfigError, DatasetError, ReportError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
