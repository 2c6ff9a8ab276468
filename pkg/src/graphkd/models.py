"""Message-passing graph classifiers (GIN, GCN, GraphSAGE, GAT).

All families share one layout: ``layers`` bias-free message-passing layers of
width ``hidden``, a masked mean over the last layer's node embeddings, and a
linear head with bias producing pre-softmax logits.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import GraphBatch
from .tensor import Tensor

FAMILIES = ("GIN", "GCN", "SAGE", "GAT")
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """Invalid model or generator configuration."""


@dataclass(frozen=True)
class GnnConfig:
    family: str
    layers: int
    hidden: int
    input_dim: int
    num_classes: int
    heads: int = 4

    def __post_init__(self):
        family = self.family.upper()
        if family == "GRAPHSAGE":
            family = "SAGE"
        object.__setattr__(self, "family", family)
        if family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if self.layers < 1 or self.hidden < 1:
            raise ConfigError(f"layers and hidden must be >= 1, got {self.layers}, {self.hidden}")
        if self.input_dim < 1 or self.num_classes < 2:
            raise ConfigError("input_dim must be >= 1 and num_classes >= 2")
        if family == "GAT" and (self.heads < 1 or self.hidden % self.heads):
            raise ConfigError(f"GAT hidden={self.hidden} is not divisible by heads={self.heads}")

    @property
    def tag(self) -> str:
        return f"{self.family}-{self.layers}-{self.hidden}"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelParams:
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.values())

    def names(self) -> list[str]:
        return list(self.tensors)

    @property
    def total_count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def requires_grad_(self, flag: bool) -> "ModelParams":
        for t in self.tensors.values():
            t.requires_grad = flag
        return self

    def copy(self) -> "ModelParams":
        return ModelParams({k: Tensor(v.data, name=k) for k, v in self.tensors.items()})

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.tensors[k].data[...] = v

    def digest(self) -> bytes:
        """Raw bytes of every tensor in name order, for exact comparisons."""
        return b"".join(self.tensors[k].data.tobytes() for k in self.tensors)


def param_shapes(config: GnnConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    h = config.hidden
    for layer in range(config.layers):
        d_in = config.input_dim if layer == 0 else h
        p = f"conv{layer}"
        if config.family == "GIN":
            shapes[f"{p}.w1"] = (d_in, h)
            shapes[f"{p}.w2"] = (h, h)
        elif config.family == "GCN":
            shapes[f"{p}.w"] = (d_in, h)
        elif config.family == "SAGE":
            shapes[f"{p}.w_self"] = (d_in, h)
            shapes[f"{p}.w_neigh"] = (d_in, h)
        else:
            d = h // config.heads
            shapes[f"{p}.w"] = (d_in, h)
            shapes[f"{p}.att_dst"] = (config.heads, d)
            shapes[f"{p}.att_src"] = (config.heads, d)
    shapes["head.w"] = (h, config.num_classes)
    shapes["head.b"] = (config.num_classes,)
    return shapes


def param_count(config: GnnConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(config).values()))


def _fans(name: str, shape: tuple[int, ...]) -> tuple[int, int]:
    if name.endswith(("att_dst", "att_src")):
        return shape[1], 1  # one scoring vector per head
    return shape[0], shape[1]


def glorot_bound(name: str, shape: tuple[int, ...]) -> float:
    fan_in, fan_out = _fans(name, shape)
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(config: GnnConfig, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        if len(shape) == 1:
            data = np.zeros(shape)
        else:
            bound = glorot_bound(name, shape)
            data = rng.uniform(-bound, bound, size=shape)
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    return ModelParams(tensors)


# --------------------------------------------------------------------------
# forward
# --------------------------------------------------------------------------


def _gin_layer(x, adj, params, p):
    agg = T.add(x, T.matmul(adj, x))  # eps fixed at 0
    hid = T.relu(T.matmul(agg, params[f"{p}.w1"]))
    return T.relu(T.matmul(hid, params[f"{p}.w2"]))


def _gcn_layer(x, adj, params, p):
    n = adj.shape[-1]
    a_hat = T.add(adj, Tensor(np.eye(n)))
    deg = T.sum(a_hat, axis=-1, keepdims=True)
    d_inv_sqrt = T.power(deg, -0.5)
    xw = T.matmul(x, params[f"{p}.w"])
    msg = T.mul(d_inv_sqrt, T.matmul(a_hat, T.mul(d_inv_sqrt, xw)))
    return T.relu(msg)


def _sage_layer(x, adj, params, p):
    deg = T.sum(adj, axis=-1, keepdims=True)
    # isolated nodes: A @ x is already zero, divide by 1 instead of 0
    safe = T.add(deg, Tensor((deg.data == 0).astype(np.float64)))
    neigh = T.div(T.matmul(adj, x), safe)
    out = T.add(T.matmul(x, params[f"{p}.w_self"]), T.matmul(neigh, params[f"{p}.w_neigh"]))
    return T.relu(out)


def gat_attention(x: Tensor, adj: Tensor, params: ModelParams, p: str, heads: int):
    """Per-head attention weights (B, H, N, N) and projected values (B, H, N, d)."""
    b, n, _ = x.shape
    w = params[f"{p}.w"]
    d = w.shape[1] // heads
    xw = T.matmul(x, w)
    values = T.permute(T.reshape(xw, (b, n, heads, d)), (0, 2, 1, 3))
    att_dst = T.reshape(params[f"{p}.att_dst"], (1, heads, 1, d))
    att_src = T.reshape(params[f"{p}.att_src"], (1, heads, 1, d))
    s_dst = T.sum(T.mul(values, att_dst), axis=-1, keepdims=True)  # (B,H,N,1)
    s_src = T.transpose(T.sum(T.mul(values, att_src), axis=-1, keepdims=True))  # (B,H,1,N)
    scores = T.leaky_relu(T.add(s_dst, s_src), 0.2)
    support = T.reshape(T.add(adj, Tensor(np.eye(n))), (b, 1, n, n))
    # shift by the max over each node's neighbourhood (constant w.r.t. gradients)
    live = support.data > 0
    shift = np.where(live, scores.data, -np.inf).max(axis=-1, keepdims=True)
    weights = T.mul(T.exp(T.sub(scores, Tensor(shift))), support)
    alpha = T.div(weights, T.sum(weights, axis=-1, keepdims=True))
    return alpha, values


def _gat_layer(x, adj, params, p, heads):
    b, n, _ = x.shape
    alpha, values = gat_attention(x, adj, params, p, heads)
    out = T.permute(T.matmul(alpha, values), (0, 2, 1, 3))
    return T.relu(T.reshape(out, (b, n, -1)))


def embed_nodes(config: GnnConfig, params: ModelParams, features: Tensor, adjacency: Tensor) -> Tensor:
    x = features
    for layer in range(config.layers):
        p = f"conv{layer}"
        if config.family == "GIN":
            x = _gin_layer(x, adjacency, params, p)
        elif config.family == "GCN":
            x = _gcn_layer(x, adjacency, params, p)
        elif config.family == "SAGE":
            x = _sage_layer(x, adjacency, params, p)
        else:
            x = _gat_layer(x, adjacency, params, p, config.heads)
    return x


def forward(
    config: GnnConfig,
    params: ModelParams,
    features: Tensor,
    adjacency: Tensor,
    node_mask: np.ndarray,
) -> Tensor:
    """Logits (B, C) for padded node features (B, N, T) and adjacency (B, N, N)."""
    if features.ndim != 3 or features.shape[-1] != config.input_dim:
        raise ConfigError(
            f"{config.tag} expects features (B, N, {config.input_dim}), got {features.shape}"
        )
    b, n, _ = features.shape
    if adjacency.shape != (b, n, n) or np.shape(node_mask) != (b, n):
        raise ConfigError(
            f"adjacency {adjacency.shape} / mask {np.shape(node_mask)} do not match features {features.shape}"
        )
    x = embed_nodes(config, params, features, adjacency)
    pooled = T.masked_mean_rows(x, Tensor(node_mask))
    return T.add(T.matmul(pooled, params["head.w"]), params["head.b"])


def model_forward(
    config: GnnConfig,
    params: ModelParams,
    batch: GraphBatch,
    soft_adjacency: Tensor | None = None,
) -> Tensor:
    adjacency = soft_adjacency if soft_adjacency is not None else Tensor(batch.adjacency)
    return forward(config, params, Tensor(batch.features), adjacency, batch.node_mask)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(path: str | Path, kind: str, config: dict, params: ModelParams, meta: dict | None = None) -> Path:
    """Write a self-describing ``.npz``: named arrays plus a JSON header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format": "graphkd-checkpoint",
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": config,
        "names": params.names(),
        "meta": meta or {},
    }
    arrays = {f"param:{k}": v.data for k, v in params.tensors.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path: str | Path) -> tuple[dict, ModelParams]:
    """Return (header, params) from :func:`save_checkpoint` output."""
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        if header.get("format") != "graphkd-checkpoint":
            raise ConfigError(f"{path} is not a graphkd checkpoint")
        if header["version"] > CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: checkpoint version {header['version']} is newer than supported")
        tensors = {k: Tensor(z[f"param:{k}"], requires_grad=True, name=k) for k in header["names"]}
    return header, ModelParams(tensors)


def save_model(path: str | Path, config: GnnConfig, params: ModelParams, meta: dict | None = None) -> Path:
    return save_checkpoint(path, "gnn", config.to_dict(), params, meta)


def load_model(path: str | Path) -> tuple[GnnConfig, ModelParams, dict]:
    header, params = load_checkpoint(path)
    if header["kind"] != "gnn":
        raise ConfigError(f"{path} holds a {header['kind']} checkpoint, not a gnn")
    config = GnnConfig(**header["config"])
    if params.names() != list(param_shapes(config)):
        raise ConfigError(f"{path}: parameter names do not match {config.tag}")
    return config, params, header["meta"]
