"""Run specifications and fold-level orchestration behind the command line."""
from __future__ import annotations

import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, load_dataset, stratified_kfold
from .distill import (
    DistillConfig,
    distill,
    evaluate,
    kd_baseline,
    pretrain_teacher,
    random_baseline,
)
from .export import export_graphs
from .generator import GeneratorConfig, init_generator, load_generator, save_generator
from .losses import LOSS_KINDS
from .models import GnnConfig, load_model, param_count, save_model
from .plotting import plot_curves, plot_fold_accuracy, plot_sweep
from .report import build_report, format_table, text_summary, write_csv, write_json

logger = logging.getLogger(__name__)

COMMANDS = ("train-teacher", "distill", "baseline", "export-graphs", "param-report")
DATA_ROOT_ENV = "DFAD_DATA_ROOT"


class UsageError(ValueError):
    """Bad flags, config file or missing inputs; maps to exit code 2."""


@dataclass
class RunSpec:
    command: str
    dataset_root: str | None = None
    dataset: str = "MUTAG"
    feature_policy: str | None = None
    # model trained by the command: teacher for train-teacher, student otherwise
    family: str = "GIN"
    layers: int = 3
    hidden: int = 32
    heads: int = 4
    teacher_dir: str | None = None
    teacher_lr: float = 1e-2
    loss: list[str] = field(default_factory=lambda: ["L-MAE"])
    epochs: int = 100
    iters_per_epoch: int = 50
    batch_size: int = 32
    k: int = 5
    tau: float = 0.5
    gen_nodes: list[str] = field(default_factory=lambda: ["avg"])
    edge_mode: str = "hard-st"
    student_lr: float = 1e-3
    gen_lr: float = 1e-3
    which: str = "kd"
    fraction: list[float] = field(default_factory=lambda: [1.0])
    num_folds: int = 10
    folds: list[int] | None = None
    seed: int = 0
    workers: int = 1
    out: str = "runs"
    generator: str | None = None
    count: int = 8
    format: str = "dot"
    teacher_model: str = "GIN-5-128"
    student_model: str = "GIN-5-32"
    input_dim: int | None = None

    @classmethod
    def resolve(cls, command: str, flags: dict, config_path: str | None = None) -> "RunSpec":
        """Defaults, overridden by the config file, overridden by explicit flags."""
        names = {f.name for f in fields(cls)}
        values: dict = {}
        if config_path:
            try:
                loaded = json.loads(Path(config_path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read config file {config_path}: {exc}") from exc
            unknown = set(loaded) - names
            if unknown:
                raise UsageError(f"unknown config keys: {sorted(unknown)}")
            values.update({k: v for k, v in loaded.items() if k != "command"})
        values.update({k: v for k, v in flags.items() if v is not None and k in names})
        values["command"] = command
        if not values.get("dataset_root"):
            values["dataset_root"] = os.environ.get(DATA_ROOT_ENV)
        spec = cls(**values)
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        for kind in self.loss:
            if kind not in LOSS_KINDS:
                raise UsageError(f"unknown loss {kind!r}; choose from {LOSS_KINDS}")
        for tok in self.gen_nodes:
            parse_gen_nodes(tok, 10.0)
        for frac in self.fraction:
            if not 0.0 < frac <= 1.0:
                raise UsageError(f"fraction must lie in (0, 1], got {frac}")
        if self.which not in ("kd", "random"):
            raise UsageError(f"--which must be kd or random, got {self.which!r}")
        if self.workers < 1:
            raise UsageError("--workers must be >= 1")
        if self.command in ("train-teacher", "distill", "baseline") and not self.dataset_root:
            raise UsageError(f"no dataset root: pass --dataset-root or set {DATA_ROOT_ENV}")

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, out: Path) -> Path:
        path = out / "runspec.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    def model_config(self, input_dim: int, num_classes: int) -> GnnConfig:
        return GnnConfig(self.family, self.layers, self.hidden, input_dim, num_classes, heads=self.heads)

    def distill_config(self, loss: str, fold: int) -> DistillConfig:
        return DistillConfig(
            epochs=self.epochs,
            iters_per_epoch=self.iters_per_epoch,
            batch_size=self.batch_size,
            k=self.k,
            loss=loss,
            student_lr=self.student_lr,
            generator_lr=self.gen_lr,
            seed=self.seed + fold,
        )


def parse_gen_nodes(token: str, avg_nodes: float) -> int:
    """``avg`` -> round(avg), ``avg*0.5`` -> round(0.5 avg), ``12`` -> 12."""
    token = str(token).strip()
    try:
        if token == "avg":
            n = round(avg_nodes)
        elif token.startswith("avg*"):
            n = round(float(token[4:]) * avg_nodes)
        else:
            n = int(token)
    except ValueError as exc:
        raise UsageError(f"bad --gen-nodes value {token!r}; use an integer, 'avg' or 'avg*F'") from exc
    if n < 2:
        raise UsageError(f"--gen-nodes {token!r} gives N={n}; need N >= 2")
    return n


def _slug(token: str) -> str:
    return str(token).replace("*", "x")


def parse_model_tag(tag: str, input_dim: int, num_classes: int = 2) -> GnnConfig:
    """``GIN-5-128`` style tag (family-layers-hidden) to a config."""
    try:
        family, layers, hidden = tag.rsplit("-", 2)
        return GnnConfig(family, int(layers), int(hidden), input_dim, num_classes)
    except ValueError as exc:
        raise UsageError(f"bad model tag {tag!r}; expected FAMILY-LAYERS-HIDDEN ({exc})") from exc


# --------------------------------------------------------------------------
# fold workers (top-level so they pickle for process pools)
# --------------------------------------------------------------------------


def _load(spec: RunSpec) -> Dataset:
    return load_dataset(spec.dataset_root, spec.dataset, spec.feature_policy)


def _fold_split(spec: RunSpec, data: Dataset, fold: int):
    plan = stratified_kfold(data, spec.num_folds, spec.seed)
    train_idx, val_idx = plan.split(fold)
    return data.subset(train_idx), data.subset(val_idx)


def _epoch_means(values: Sequence[float], epochs: int) -> list[float]:
    if not values or epochs == 0:
        return []
    return [float(np.mean(chunk)) for chunk in np.array_split(np.asarray(values), epochs)]


def _teacher_path(teacher_dir: str | Path, fold: int) -> Path:
    return Path(teacher_dir) / f"teacher_fold{fold}.npz"


def teacher_fold(spec: RunSpec, fold: int) -> dict:
    started = time.perf_counter()
    data = _load(spec)
    train, val = _fold_split(spec, data, fold)
    cfg = spec.model_config(data.feature_dim, data.num_classes)
    params, acc = pretrain_teacher(cfg, train, val, epochs=spec.epochs, lr=spec.teacher_lr, seed=spec.seed + fold)
    save_model(_teacher_path(spec.out, fold), cfg, params, {"fold": fold, "accuracy": acc, "seed": spec.seed})
    return {"fold": fold, "accuracy": acc, "seconds": time.perf_counter() - started}


def _load_teacher(spec: RunSpec, fold: int):
    path = _teacher_path(spec.teacher_dir, fold)
    cfg, params, meta = load_model(path)
    return cfg, params, meta


def student_fold(spec: RunSpec, fold: int, loss: str, gen_nodes: str, mode: str, fraction: float = 1.0) -> dict:
    """One fold of distill (mode 'dfad'), random or kd baseline; writes per-fold artifacts."""
    started = time.perf_counter()
    data = _load(spec)
    train, val = _fold_split(spec, data, fold)
    t_cfg, t_params, t_meta = _load_teacher(spec, fold)
    s_cfg = spec.model_config(data.feature_dim, data.num_classes)
    cfg = spec.distill_config(loss, fold)
    out = Path(spec.out)
    if mode == "kd":
        student, log = kd_baseline((t_cfg, t_params), s_cfg, train, fraction, cfg)
        n = None
    else:
        n = parse_gen_nodes(gen_nodes, float(np.mean([g.n for g in train])))
        gen_cfg = GeneratorConfig(n, data.feature_dim, tau=spec.tau, edge_mode=spec.edge_mode)
        gen = init_generator(gen_cfg, cfg.seed + 2)
        run = distill if mode == "dfad" else random_baseline
        student, log = run((t_cfg, t_params), s_cfg, gen_cfg, cfg, generator=gen)
        if mode == "dfad":
            save_generator(out / f"generator_fold{fold}.npz", gen_cfg, gen, {"fold": fold, "loss": loss})
    save_model(out / f"student_fold{fold}.npz", s_cfg, student, {"fold": fold, "mode": mode})
    log.write_jsonl(out / f"log_fold{fold}.jsonl", cfg.k)
    return {
        "fold": fold,
        "accuracy": evaluate(s_cfg, student, val),
        "teacher_accuracy": float(evaluate(t_cfg, t_params, val)),
        "teacher_params": param_count(t_cfg),
        "student_params": param_count(s_cfg),
        "gen_nodes": n,
        "student_curve": _epoch_means(log.student_loss, cfg.epochs),
        "generator_curve": _epoch_means(log.generator_loss, cfg.epochs),
        "seconds": time.perf_counter() - started,
    }


def _map_folds(fn: Callable, spec: RunSpec, folds: Sequence[int], *args) -> list[dict]:
    if spec.workers == 1 or len(folds) == 1:
        return [fn(spec, f, *args) for f in folds]
    with ProcessPoolExecutor(max_workers=spec.workers) as pool:
        return list(pool.map(fn, [spec] * len(folds), folds, *[[a] * len(folds) for a in args]))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _prepare(spec: RunSpec) -> tuple[Dataset, list[int], Path]:
    data = _load(spec)
    folds = list(range(spec.num_folds)) if spec.folds is None else list(spec.folds)
    bad = [f for f in folds if not 0 <= f < spec.num_folds]
    if bad:
        raise UsageError(f"fold indices {bad} outside 0..{spec.num_folds - 1}")
    stratified_kfold(data, spec.num_folds, spec.seed)  # fails early on too few graphs
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    return data, folds, out


def _check_teachers(spec: RunSpec, folds: Sequence[int]) -> None:
    if not spec.teacher_dir:
        raise UsageError("--teacher-dir is required (run train-teacher first)")
    for f in folds:
        if not _teacher_path(spec.teacher_dir, f).exists():
            raise UsageError(f"missing teacher checkpoint for fold {f}: {_teacher_path(spec.teacher_dir, f)}")


def _emit(report: dict, out: Path, stem: str = "report") -> dict:
    write_json(report, out / f"{stem}.json")
    (out / f"{stem}.txt").write_text(text_summary(report))
    plot_fold_accuracy(report, out / "accuracy.png")
    if report.get("curves"):
        plot_curves(report["curves"], out / "curves.png")
    return report


def cmd_train_teacher(spec: RunSpec) -> dict:
    data, folds, out = _prepare(spec)
    spec.write(out)
    started = time.perf_counter()
    results = _map_folds(teacher_fold, spec, folds)
    report = build_report(
        "teacher",
        data.name,
        folds,
        [r["accuracy"] for r in results],
        config=spec.to_dict(),
        timing={"total_seconds": time.perf_counter() - started, "per_fold_seconds": [r["seconds"] for r in results]},
        label=spec.model_config(data.feature_dim, data.num_classes).tag,
    )
    return _emit(report, out)


def _student_report(spec: RunSpec, data: Dataset, folds, results, kind: str, label: str, started: float) -> dict:
    curves = {"student_loss": [r["student_curve"] for r in results]}
    if kind == "distill":
        curves["generator_loss"] = [r["generator_curve"] for r in results]
    return build_report(
        kind,
        data.name,
        folds,
        [r["accuracy"] for r in results],
        config=spec.to_dict(),
        timing={"total_seconds": time.perf_counter() - started, "per_fold_seconds": [r["seconds"] for r in results]},
        teacher_accuracies=[r["teacher_accuracy"] for r in results],
        teacher_params=results[0]["teacher_params"],
        student_params=results[0]["student_params"],
        curves=curves,
        label=label,
    )


def _sweep(spec: RunSpec, cases: list[tuple[str, dict]], kind: str, mode: str) -> list[dict]:
    """Run each (label, overrides) case into its own directory when there is more than one."""
    data, folds, out = _prepare(spec)
    _check_teachers(spec, folds)
    spec.write(out)
    reports = []
    for label, case in cases:
        sub = out / label if len(cases) > 1 else out
        sub.mkdir(parents=True, exist_ok=True)
        case_spec = RunSpec(**{**spec.to_dict(), "out": str(sub)})
        started = time.perf_counter()
        results = _map_folds(student_fold, case_spec, folds, case["loss"], case["gen_nodes"], mode, case["fraction"])
        report = _student_report(case_spec, data, folds, results, kind, label, started)
        reports.append(_emit(report, sub))
    return reports


def cmd_distill(spec: RunSpec) -> list[dict]:
    cases = [
        (f"loss-{loss}_n-{_slug(n)}", {"loss": loss, "gen_nodes": n, "fraction": 1.0})
        for loss in spec.loss
        for n in spec.gen_nodes
    ]
    reports = _sweep(spec, cases, "distill", "dfad")
    if len(reports) > 1:
        _write_sweep(Path(spec.out), reports, cases)
    return reports


def cmd_baseline(spec: RunSpec) -> list[dict]:
    if spec.which == "random":
        cases = [(f"random_n-{_slug(n)}", {"loss": spec.loss[0], "gen_nodes": n, "fraction": 1.0}) for n in spec.gen_nodes]
        return _sweep(spec, cases, "random", "random")
    cases = [(f"fraction-{f:g}", {"loss": spec.loss[0], "gen_nodes": "avg", "fraction": f}) for f in spec.fraction]
    reports = _sweep(spec, cases, "kd", "kd")
    _write_sweep(Path(spec.out), reports, cases)
    return reports


def _write_sweep(out: Path, reports: list[dict], cases: list[tuple[str, dict]]) -> Path:
    rows = []
    for report, (label, case) in zip(reports, cases):
        rows.append(
            {
                "label": label,
                "loss": case["loss"],
                "gen_nodes": case["gen_nodes"],
                "fraction": case["fraction"],
                "mean": report["mean"],
                "std": report["std"],
                "teacher_mean": report["teacher_mean"],
                "relative_percent": report["relative_percent"],
            }
        )
    fractions = {r["fraction"] for r in rows}
    if len(fractions) > 1:
        plot_sweep([r["fraction"] for r in rows], [r["mean"] for r in rows], [r["std"] for r in rows], "fraction of real data", out / "sweep.png")
    else:
        plot_sweep([r["label"] for r in rows], [r["mean"] for r in rows], [r["std"] for r in rows], "setting", out / "sweep.png", categorical=True)
    return write_csv(rows, out / "sweep.csv")


def cmd_export_graphs(spec: RunSpec) -> list[Path]:
    if not spec.generator:
        raise UsageError("--generator checkpoint path is required")
    if spec.format not in ("dot", "jsonl"):
        raise UsageError(f"unknown export format {spec.format!r}; choose dot or jsonl")
    try:
        gen_cfg, params, _ = load_generator(spec.generator)
    except FileNotFoundError as exc:
        raise UsageError(f"generator checkpoint not found: {spec.generator}") from exc
    return export_graphs(gen_cfg, params, spec.count, spec.format, spec.out, spec.seed)


def cmd_param_report(spec: RunSpec) -> str:
    dim = spec.input_dim
    if dim is None:
        dim = _load(spec).feature_dim if spec.dataset_root else 7
    teacher = parse_model_tag(spec.teacher_model, dim)
    student = parse_model_tag(spec.student_model, dim)
    m, s = param_count(teacher), param_count(student)
    rows = [[teacher.tag, m, "100.0%"], [student.tag, s, f"{100.0 * s / m:.1f}%"]]
    return format_table(rows, ["model", "params", "ratio to m"])
