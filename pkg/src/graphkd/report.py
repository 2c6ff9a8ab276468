"""Experiment reports: JSON with a published schema, aligned text, CSV sweeps."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np

REPORT_KINDS = ("teacher", "distill", "kd", "random")

_num = {"type": "number"}
_num_list = {"type": "array", "items": _num}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ExperimentReport",
    "type": "object",
    "required": ["kind", "dataset", "folds", "accuracies", "mean", "std", "config", "timing"],
    "properties": {
        "kind": {"enum": list(REPORT_KINDS)},
        "dataset": {"type": "string"},
        "label": {"type": "string"},
        "folds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "accuracies": {**_num_list, "minItems": 1},
        "mean": _num,
        "std": _num,
        "teacher_accuracies": _num_list,
        "teacher_mean": _num,
        "relative_percent": _num,
        "teacher_params": {"type": "integer", "minimum": 1},
        "student_params": {"type": "integer", "minimum": 1},
        "param_ratio_percent": _num,
        "curves": {
            "type": "object",
            "properties": {
                "student_loss": {"type": "array", "items": _num_list},
                "generator_loss": {"type": "array", "items": _num_list},
                "eval_accuracy": {"type": "array", "items": _num_list},
            },
            "additionalProperties": False,
        },
        "config": {"type": "object"},
        "timing": {
            "type": "object",
            "required": ["total_seconds"],
            "properties": {"total_seconds": _num, "per_fold_seconds": _num_list},
        },
    },
    "additionalProperties": False,
}


class ReportError(ValueError):
    pass


def summarize(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def build_report(
    kind: str,
    dataset: str,
    folds: Sequence[int],
    accuracies: Sequence[float],
    config: dict,
    timing: dict,
    teacher_accuracies: Sequence[float] | None = None,
    teacher_params: int | None = None,
    student_params: int | None = None,
    curves: dict | None = None,
    label: str | None = None,
) -> dict:
    if len(folds) != len(accuracies):
        raise ReportError("one accuracy per fold required")
    mean, std = summarize(accuracies)
    report = {
        "kind": kind,
        "dataset": dataset,
        "folds": [int(f) for f in folds],
        "accuracies": [float(a) for a in accuracies],
        "mean": mean,
        "std": std,
    }
    if label is not None:
        report["label"] = label
    if teacher_accuracies is not None:
        t_mean, _ = summarize(teacher_accuracies)
        report["teacher_accuracies"] = [float(a) for a in teacher_accuracies]
        report["teacher_mean"] = t_mean
        report["relative_percent"] = 100.0 * mean / t_mean if t_mean > 0 else 0.0
    if teacher_params is not None and student_params is not None:
        report["teacher_params"] = int(teacher_params)
        report["student_params"] = int(student_params)
        report["param_ratio_percent"] = 100.0 * student_params / teacher_params
    if curves is not None:
        report["curves"] = curves
    report["config"] = config
    report["timing"] = timing
    validate_report(report)
    return report


def validate_report(report: dict) -> None:
    """Schema check plus internal consistency of the derived fields."""
    try:
        jsonschema.validate(report, REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ReportError(f"report does not match schema: {exc.message}") from exc
    mean, std = summarize(report["accuracies"])
    if abs(mean - report["mean"]) > 1e-12 or abs(std - report["std"]) > 1e-12:
        raise ReportError("mean/std inconsistent with per-fold accuracies")
    if "teacher_mean" in report:
        t_mean, _ = summarize(report["teacher_accuracies"])
        if abs(t_mean - report["teacher_mean"]) > 1e-12:
            raise ReportError("teacher_mean inconsistent with teacher_accuracies")
        if t_mean > 0 and abs(report["relative_percent"] - 100.0 * mean / t_mean) > 1e-9:
            raise ReportError("relative_percent inconsistent")
    if "param_ratio_percent" in report:
        expected = 100.0 * report["student_params"] / report["teacher_params"]
        if abs(report["param_ratio_percent"] - expected) > 1e-9:
            raise ReportError("param_ratio_percent inconsistent")


def without_timing(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "timing"}


def write_json(report: dict, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return path


def read_report(path: str | Path) -> dict:
    report = json.loads(Path(path).read_text())
    validate_report(report)
    return report


def format_table(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    cells = [[str(c) for c in header]] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
    lines = [fmt(cells[0]), "  ".join("-" * w for w in widths)]
    return "\n".join(lines + [fmt(r) for r in cells[1:]]) + "\n"


def text_summary(report: dict) -> str:
    title = f"{report['kind']} on {report['dataset']}"
    if report.get("label"):
        title += f" [{report['label']}]"
    rows = []
    for i, (fold, acc) in enumerate(zip(report["folds"], report["accuracies"])):
        row = [fold, f"{acc:.4f}"]
        if "teacher_accuracies" in report:
            row.append(f"{report['teacher_accuracies'][i]:.4f}")
        rows.append(row)
    header = ["fold", "accuracy"] + (["teacher"] if "teacher_accuracies" in report else [])
    out = [title, "", format_table(rows, header)]
    out.append(f"mean {100 * report['mean']:.1f} +- {100 * report['std']:.1f}")
    if "relative_percent" in report:
        out.append(f"teacher {100 * report['teacher_mean']:.1f}  relative {report['relative_percent']:.1f}% x t")
    if "param_ratio_percent" in report:
        out.append(
            f"params {report['student_params']} / {report['teacher_params']}"
            f"  ratio {report['param_ratio_percent']:.1f}% x m"
        )
    return "\n".join(out) + "\n"


def write_csv(rows: Sequence[dict], path: str | Path) -> Path:
    path = Path(path)
    if not rows:
        raise ReportError("no rows to write")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    return path
