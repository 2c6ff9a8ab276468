"""Figures written next to reports (PNG, non-interactive backend)."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_fold_accuracy(report: dict, path) -> Path:
    """Per-fold accuracy bars, with teacher bars alongside when present."""
    folds = report["folds"]
    x = np.arange(len(folds))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    has_teacher = "teacher_accuracies" in report
    width = 0.4 if has_teacher else 0.7
    ax.bar(x - (width / 2 if has_teacher else 0), report["accuracies"], width, label=report["kind"])
    if has_teacher:
        ax.bar(x + width / 2, report["teacher_accuracies"], width, label="teacher")
    ax.axhline(report["mean"], color="k", lw=0.8, ls="--")
    ax.set_xticks(x, [str(f) for f in folds])
    ax.set_xlabel("fold")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend(loc="lower right", fontsize=8)
    return _save(fig, path)


def plot_curves(curves: dict, path) -> Path:
    """Per-epoch mean losses, one line per fold."""
    keys = [k for k in ("student_loss", "generator_loss") if curves.get(k)]
    fig, axes = plt.subplots(1, max(len(keys), 1), figsize=(5 * max(len(keys), 1), 3.5), squeeze=False)
    for ax, key in zip(axes[0], keys):
        for i, series in enumerate(curves[key]):
            ax.plot(np.arange(1, len(series) + 1), series, lw=1, label=f"fold {i}")
        ax.set_title(key.replace("_", " "))
        ax.set_xlabel("epoch")
        ax.set_yscale("symlog")
    return _save(fig, path)


def plot_sweep(xs: Sequence, means: Sequence[float], stds: Sequence[float], xlabel: str, path, categorical=False) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    pos = np.arange(len(xs)) if categorical else np.asarray(xs, dtype=float)
    ax.errorbar(pos, means, yerr=stds, marker="o", capsize=3)
    if categorical:
        ax.set_xticks(pos, [str(x) for x in xs])
    ax.set_xlabel(xlabel)
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.05)
    return _save(fig, path)
