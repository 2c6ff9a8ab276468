"""Latent-to-graph generator.

An MLP maps z ~ N(0, I) to node features F (N x T); the adjacency is the
elementwise sigmoid of F F^T, thresholded at ``tau`` to get a binary graph.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .gradcheck import GradCheckReport, gradcheck
from .losses import discrepancy_loss
from .models import ConfigError, ModelParams, forward, load_checkpoint, save_checkpoint
from .tensor import Tensor

EDGE_MODES = ("hard-st", "soft")


@dataclass(frozen=True)
class GeneratorConfig:
    node_count: int
    feature_dim: int
    latent_dim: int = 32
    hidden: tuple[int, ...] = (64, 128, 256)
    tau: float = 0.5
    edge_mode: str = "hard-st"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(self.hidden))
        if self.node_count < 2:
            raise ConfigError(f"generator needs N >= 2 nodes, got {self.node_count}")
        if self.feature_dim < 1 or self.latent_dim < 1:
            raise ConfigError("feature_dim and latent_dim must be >= 1")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"threshold tau must lie in (0, 1), got {self.tau}")
        if self.edge_mode not in EDGE_MODES:
            raise ConfigError(f"edge_mode must be one of {EDGE_MODES}, got {self.edge_mode!r}")

    def layer_dims(self) -> list[int]:
        return [self.latent_dim, *self.hidden, self.node_count * self.feature_dim]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class GeneratedBatch:
    features: Tensor  # (B, N, T)
    adj_soft: Tensor  # (B, N, N), sigmoid(F F^T), diagonal untouched
    adj_hard: np.ndarray  # (B, N, N) in {0, 1}, zero diagonal
    node_mask: np.ndarray  # (B, N) all ones
    edge_mode: str = "hard-st"
    _consumer: Tensor | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.adj_hard.shape[0]

    def adjacency(self) -> Tensor:
        """Adjacency handed to the discriminators.

        ``hard-st``: the binary graph in the forward pass, gradients routed to the
        off-diagonal soft adjacency. ``soft``: the off-diagonal soft adjacency.
        """
        if self._consumer is None:
            n = self.adj_hard.shape[-1]
            off_diag = T.mul(self.adj_soft, Tensor(1.0 - np.eye(n)))
            if self.edge_mode == "soft":
                self._consumer = off_diag
            else:
                self._consumer = T.straight_through(Tensor(self.adj_hard), off_diag)
        return self._consumer


def init_generator(config: GeneratorConfig, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    dims = config.layer_dims()
    tensors = {}
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        bound = np.sqrt(6.0 / (d_in + d_out))
        tensors[f"fc{i}.w"] = Tensor(rng.uniform(-bound, bound, (d_in, d_out)), True, f"fc{i}.w")
        tensors[f"fc{i}.b"] = Tensor(np.zeros(d_out), True, f"fc{i}.b")
    return ModelParams(tensors)


def sample_latent(batch_size: int, latent_dim: int, rng: np.random.Generator) -> Tensor:
    if batch_size < 1:
        raise ValueError(f"batch size must be >= 1, got {batch_size}")
    return Tensor(rng.standard_normal((batch_size, latent_dim)))


def threshold(adj_soft: np.ndarray, tau: float) -> np.ndarray:
    """Binary adjacency: 1 where strictly above ``tau``, diagonal forced to 0."""
    hard = (adj_soft > tau).astype(np.float64)
    idx = np.arange(hard.shape[-1])
    hard[..., idx, idx] = 0.0
    return hard


def generate(config: GeneratorConfig, params: ModelParams, z: Tensor) -> GeneratedBatch:
    if z.ndim != 2 or z.shape[1] != config.latent_dim:
        raise ConfigError(f"latent batch must be (B, {config.latent_dim}), got {z.shape}")
    n_layers = len(config.layer_dims()) - 1
    h = z
    for i in range(n_layers):
        h = T.add(T.matmul(h, params[f"fc{i}.w"]), params[f"fc{i}.b"])
        if i < n_layers - 1:
            h = T.tanh(h)
    b = z.shape[0]
    feats = T.reshape(h, (b, config.node_count, config.feature_dim))
    adj_soft = T.sigmoid(T.matmul(feats, T.transpose(feats)))
    return GeneratedBatch(
        features=feats,
        adj_soft=adj_soft,
        adj_hard=threshold(adj_soft.data, config.tau),
        node_mask=np.ones((b, config.node_count)),
        edge_mode=config.edge_mode,
    )


def adjacency_flops(config: GeneratorConfig, batch_size: int) -> int:
    """Multiply-adds of the F F^T product: B * N * N * T."""
    return batch_size * config.node_count * config.node_count * config.feature_dim


def save_generator(path, config: GeneratorConfig, params: ModelParams, meta: dict | None = None):
    return save_checkpoint(path, "generator", config.to_dict(), params, meta)


def load_generator(path) -> tuple[GeneratorConfig, ModelParams, dict]:
    header, params = load_checkpoint(path)
    if header["kind"] != "generator":
        raise ConfigError(f"{path} holds a {header['kind']} checkpoint, not a generator")
    return GeneratorConfig(**header["config"]), params, header["meta"]


def generator_grad_check(
    config: GeneratorConfig,
    params: ModelParams,
    teacher: tuple,
    student: tuple,
    batch_size: int = 2,
    seed: int = 0,
    loss_kind: str = "L-MAE",
    tolerance: float = 1e-3,
) -> GradCheckReport:
    """Finite-difference check of d(L_GEN)/d(generator params) through both discriminators.

    Only ``soft`` edge mode is checked; the straight-through path is a biased
    estimator with no finite-difference counterpart.
    """
    if config.edge_mode != "soft":
        raise ConfigError("gradient check requires edge_mode='soft'")
    z = sample_latent(batch_size, config.latent_dim, np.random.default_rng(seed))
    (t_cfg, t_params), (s_cfg, s_params) = teacher, student
    t_params.requires_grad_(False)
    s_params.requires_grad_(False)

    def loss():
        g = generate(config, params, z)
        adj = g.adjacency()
        qt = forward(t_cfg, t_params, g.features, adj, g.node_mask)
        qs = forward(s_cfg, s_params, g.features, adj, g.node_mask)
        return T.scalar_mul(discrepancy_loss(loss_kind, qt, qs), -1.0)

    return gradcheck(loss, params.tensors, tolerance=tolerance)
