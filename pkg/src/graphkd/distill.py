"""Teacher pretraining, adversarial data-free distillation, and baselines."""
from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import Graph, make_batch, stratified_subset
from .generator import GeneratorConfig, generate, init_generator, sample_latent
from .losses import LOSS_KINDS, NonFiniteError, cross_entropy, discrepancy_loss
from .models import GnnConfig, ModelParams, forward, init_params
from .tensor import Adam, StepSchedule, Tensor, backward, no_grad, reset_tape

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss became NaN; ``last_good`` holds the most recent finite parameter state."""

    def __init__(self, message: str, last_good: dict[str, np.ndarray] | None = None):
        super().__init__(message)
        self.last_good = last_good


@dataclass
class DistillConfig:
    epochs: int = 100
    iters_per_epoch: int = 50
    batch_size: int = 32
    k: int = 5
    loss: str = "L-MAE"
    student_lr: float = 1e-3
    generator_lr: float = 1e-3
    student_weight_decay: float = 5e-4
    generator_weight_decay: float = 0.0
    milestones: tuple[float, ...] = (0.1, 0.3, 0.5)
    lr_factor: float = 0.3
    seed: int = 0

    def __post_init__(self):
        self.milestones = tuple(self.milestones)
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.epochs < 0 or self.iters_per_epoch < 1 or self.batch_size < 1:
            raise ValueError("epochs >= 0, iters_per_epoch >= 1 and batch_size >= 1 required")
        if self.student_lr <= 0 or self.generator_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss!r}; choose from {LOSS_KINDS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        return d


@dataclass
class TrainLog:
    student_loss: list[float] = field(default_factory=list)  # one per student step
    generator_loss: list[float] = field(default_factory=list)  # L_DIS at each generator step
    eval_accuracy: list[float] = field(default_factory=list)  # one per epoch
    student_steps: int = 0
    generator_steps: int = 0
    wall_time: float = 0.0

    def records(self, k: int = 1):
        for i, v in enumerate(self.student_loss):
            yield {"phase": "student", "step": i, "iteration": i // k, "loss": v}
        for i, v in enumerate(self.generator_loss):
            yield {"phase": "generator", "step": i, "iteration": i, "loss": v}
        for i, v in enumerate(self.eval_accuracy):
            yield {"phase": "eval", "epoch": i, "accuracy": v}

    def write_jsonl(self, path: str | Path, k: int = 1) -> Path:
        path = Path(path)
        with open(path, "w") as fh:
            for rec in self.records(k):
                fh.write(json.dumps(rec) + "\n")
        return path


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------


def predict_logits(config: GnnConfig, params: ModelParams, graphs: Sequence[Graph], chunk: int = 256) -> np.ndarray:
    out = []
    with no_grad():
        for start in range(0, len(graphs), chunk):
            batch = make_batch(graphs[start : start + chunk])
            out.append(
                forward(config, params, Tensor(batch.features), Tensor(batch.adjacency), batch.node_mask).data
            )
    return np.concatenate(out)


def evaluate(config: GnnConfig, params: ModelParams, graphs: Sequence[Graph]) -> float:
    """Fraction of graphs whose argmax logit (lowest index on ties) equals the label."""
    if not graphs:
        raise ValueError("evaluate: empty graph list")
    dim = graphs[0].features.shape[1]
    if dim != config.input_dim:
        raise ValueError(f"evaluate: graphs have {dim} features, {config.tag} expects {config.input_dim}")
    pred = predict_logits(config, params, graphs).argmax(axis=1)
    labels = np.array([g.label for g in graphs])
    return float(np.mean(pred == labels))


# --------------------------------------------------------------------------
# teacher
# --------------------------------------------------------------------------


def pretrain_teacher(
    config: GnnConfig,
    train: Sequence[Graph],
    val: Sequence[Graph],
    epochs: int = 100,
    lr: float = 1e-2,
    seed: int = 0,
    batch_size: int = 32,
    weight_decay: float = 5e-4,
) -> tuple[ModelParams, float]:
    """Cross-entropy training; returns the snapshot with the best validation accuracy.

    Later epochs win ties, so a teacher that saturates validation early keeps
    training its margins.
    """
    if not train:
        raise ValueError("pretrain_teacher: empty training set")
    if len({g.label for g in train}) < 2:
        raise ValueError("pretrain_teacher: training labels cover fewer than 2 classes")
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    opt = Adam(params, lr=lr, weight_decay=weight_decay)
    val = val or train
    best_acc = evaluate(config, params, val)
    best = params.state()
    order = np.arange(len(train))
    for epoch in range(epochs):
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            batch = make_batch([train[i] for i in order[start : start + batch_size]])
            reset_tape()
            logits = forward(config, params, Tensor(batch.features), Tensor(batch.adjacency), batch.node_mask)
            loss = cross_entropy(logits, batch.labels)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"teacher loss is NaN at epoch {epoch}", best)
            backward(loss)
            opt.step()
        acc = evaluate(config, params, val)
        if acc >= best_acc:
            best_acc, best = acc, params.state()
    params.load_state(best)
    return params, best_acc


# --------------------------------------------------------------------------
# adversarial distillation
# --------------------------------------------------------------------------


def discriminator_logits(teacher, student, gen_cfg: GeneratorConfig, gen_params: ModelParams, z: Tensor):
    """Teacher and student logits on the graphs generated from ``z``."""
    (t_cfg, t_params), (s_cfg, s_params) = teacher, student
    g = generate(gen_cfg, gen_params, z)
    adj = g.adjacency()
    qt = forward(t_cfg, t_params, g.features, adj, g.node_mask)
    qs = forward(s_cfg, s_params, g.features, adj, g.node_mask)
    return qt, qs


def adversarial_losses(teacher, student, gen_cfg, gen_params, z, kind: str = "L-MAE"):
    """(L_DIS, L_GEN) on a shared latent batch; L_GEN is the negated discrepancy."""
    qt, qs = discriminator_logits(teacher, student, gen_cfg, gen_params, z)
    l_dis = discrepancy_loss(kind, qt, qs)
    return l_dis, T.scalar_mul(l_dis, -1.0)


class _Frozen:
    """Switch off gradient tracking on a parameter set, restoring it on exit."""

    def __init__(self, params: ModelParams):
        self.params = params

    def __enter__(self):
        self.flags = {k: t.requires_grad for k, t in self.params.tensors.items()}
        self.params.requires_grad_(False)
        return self.params

    def __exit__(self, *exc):
        for k, flag in self.flags.items():
            self.params.tensors[k].requires_grad = flag


def _check_finite(value: float, what: str, last_good: dict) -> None:
    if not np.isfinite(value):
        raise TrainingDiverged(f"{what} became NaN", last_good)


@contextmanager
def _diverges(what: str, last_good: dict):
    try:
        yield
    except NonFiniteError as exc:
        raise TrainingDiverged(f"{what}: {exc}", last_good) from exc


def _run_adversarial(
    teacher,
    student_cfg: GnnConfig,
    gen_cfg: GeneratorConfig,
    cfg: DistillConfig,
    eval_set: Sequence[Graph],
    update_generator: bool,
    student_init: ModelParams | None,
    generator: ModelParams | None,
):
    t_cfg, t_params = teacher
    if gen_cfg.feature_dim != t_cfg.input_dim or student_cfg.input_dim != t_cfg.input_dim:
        raise ValueError("teacher, student and generator must agree on the feature dimension")
    rng = np.random.default_rng(cfg.seed)
    student = student_init if student_init is not None else init_params(student_cfg, cfg.seed + 1)
    gen = generator if generator is not None else init_generator(gen_cfg, cfg.seed + 2)
    opt_s = Adam(student, lr=cfg.student_lr, weight_decay=cfg.student_weight_decay)
    opt_g = Adam(gen, lr=cfg.generator_lr, weight_decay=cfg.generator_weight_decay)
    sched_s = StepSchedule(cfg.student_lr, cfg.epochs, cfg.milestones, cfg.lr_factor)
    sched_g = StepSchedule(cfg.generator_lr, cfg.epochs, cfg.milestones, cfg.lr_factor)
    log = TrainLog()
    started = time.perf_counter()
    last_good = student.state()
    s_pair = (student_cfg, student)

    with _Frozen(t_params):
        for epoch in range(cfg.epochs):
            sched_s.apply(opt_s, epoch)
            sched_g.apply(opt_g, epoch)
            for _ in range(cfg.iters_per_epoch):
                # distillation stage: student only
                student.requires_grad_(True)
                with _Frozen(gen):
                    for _ in range(cfg.k):
                        reset_tape()
                        z = sample_latent(cfg.batch_size, gen_cfg.latent_dim, rng)
                        with _diverges("distillation loss", last_good):
                            l_dis, _ = adversarial_losses(teacher, s_pair, gen_cfg, gen, z, cfg.loss)
                        _check_finite(l_dis.item(), "distillation loss", last_good)
                        backward(l_dis)
                        opt_s.step()
                        log.student_loss.append(l_dis.item())
                if not update_generator:
                    continue
                # generation stage: generator only, fresh z
                gen.requires_grad_(True)
                with _Frozen(student):
                    reset_tape()
                    z = sample_latent(cfg.batch_size, gen_cfg.latent_dim, rng)
                    with _diverges("generation loss", last_good):
                        l_dis, l_gen = adversarial_losses(teacher, s_pair, gen_cfg, gen, z, cfg.loss)
                    _check_finite(l_dis.item(), "generation loss", last_good)
                    backward(l_gen)
                    opt_g.step()
                    log.generator_loss.append(l_dis.item())
            last_good = student.state()
            if eval_set:
                log.eval_accuracy.append(evaluate(student_cfg, student, eval_set))
    reset_tape()
    student.requires_grad_(True)
    log.student_steps = opt_s.step_count
    log.generator_steps = opt_g.step_count
    log.wall_time = time.perf_counter() - started
    return student, log


def distill(
    teacher: tuple[GnnConfig, ModelParams],
    student_cfg: GnnConfig,
    gen_cfg: GeneratorConfig,
    cfg: DistillConfig,
    eval_set: Sequence[Graph] = (),
    student_init: ModelParams | None = None,
    generator: ModelParams | None = None,
) -> tuple[ModelParams, TrainLog]:
    """Data-free adversarial distillation.

    Each iteration runs ``cfg.k`` student steps minimising the discrepancy on
    generated graphs, then one generator step maximising it on a fresh latent
    batch. The teacher is never updated. Pass ``generator`` to keep a handle on
    the trained generator parameters (they are updated in place).
    """
    return _run_adversarial(teacher, student_cfg, gen_cfg, cfg, eval_set, True, student_init, generator)


def random_baseline(
    teacher: tuple[GnnConfig, ModelParams],
    student_cfg: GnnConfig,
    gen_cfg: GeneratorConfig,
    cfg: DistillConfig,
    eval_set: Sequence[Graph] = (),
    student_init: ModelParams | None = None,
    generator: ModelParams | None = None,
) -> tuple[ModelParams, TrainLog]:
    """Distillation stage only: the randomly initialised generator is never trained."""
    return _run_adversarial(teacher, student_cfg, gen_cfg, cfg, eval_set, False, student_init, generator)


def kd_baseline(
    teacher: tuple[GnnConfig, ModelParams],
    student_cfg: GnnConfig,
    data: Sequence[Graph],
    fraction: float,
    cfg: DistillConfig,
    eval_set: Sequence[Graph] = (),
) -> tuple[ModelParams, TrainLog]:
    """Distil on a seeded stratified ``fraction`` of real graphs with the same loss.

    Uses the same number of student steps as :func:`distill` (epochs x
    iterations x k), each on a minibatch of the real subset.
    """
    t_cfg, t_params = teacher
    subset_idx = stratified_subset([g.label for g in data], fraction, cfg.seed)
    subset = [data[i] for i in subset_idx]
    if not subset:
        raise ValueError("kd_baseline: empty training subset")
    rng = np.random.default_rng(cfg.seed)
    student = init_params(student_cfg, cfg.seed + 1)
    opt = Adam(student, lr=cfg.student_lr, weight_decay=cfg.student_weight_decay)
    sched = StepSchedule(cfg.student_lr, cfg.epochs, cfg.milestones, cfg.lr_factor)
    log = TrainLog()
    started = time.perf_counter()
    last_good = student.state()
    order = rng.permutation(len(subset))
    cursor = 0
    bs = min(cfg.batch_size, len(subset))
    with _Frozen(t_params):
        for epoch in range(cfg.epochs):
            sched.apply(opt, epoch)
            for _ in range(cfg.iters_per_epoch * cfg.k):
                if cursor + bs > len(order):
                    order, cursor = rng.permutation(len(subset)), 0
                batch = make_batch([subset[i] for i in order[cursor : cursor + bs]])
                cursor += bs
                reset_tape()
                feats, adj = Tensor(batch.features), Tensor(batch.adjacency)
                qt = forward(t_cfg, t_params, feats, adj, batch.node_mask)
                qs = forward(student_cfg, student, feats, adj, batch.node_mask)
                with _diverges("kd loss", last_good):
                    loss = discrepancy_loss(cfg.loss, qt, qs)
                _check_finite(loss.item(), "kd loss", last_good)
                backward(loss)
                opt.step()
                log.student_loss.append(loss.item())
            last_good = student.state()
            if eval_set:
                log.eval_accuracy.append(evaluate(student_cfg, student, eval_set))
    reset_tape()
    log.student_steps = opt.step_count
    log.wall_time = time.perf_counter() - started
    return student, log
