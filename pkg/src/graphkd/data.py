"""Graph-classification datasets: TU-format I/O, node features, folds, padding."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)


class DatasetError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass
class Graph:
    adjacency: np.ndarray  # (n, n) 0/1, symmetric, zero diagonal
    label: int
    features: np.ndarray | None = None  # (n, T)
    node_labels: np.ndarray | None = None  # (n,) raw integer node labels

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(int)

    def validate(self) -> None:
        a = self.adjacency
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DatasetError(f"adjacency must be square, got {a.shape}")
        if not np.array_equal(a, a.T):
            raise DatasetError("adjacency is not symmetric")
        if np.any(np.diag(a) != 0):
            raise DatasetError("adjacency has self-loops")
        if not np.all((a == 0) | (a == 1)):
            raise DatasetError("adjacency entries must be 0 or 1")
        if self.features is not None:
            if self.features.shape[0] != self.n:
                raise DatasetError(f"features have {self.features.shape[0]} rows for {self.n} nodes")
            if not np.all(np.isfinite(self.features)):
                raise DatasetError("features contain NaN or Inf")


@dataclass
class Dataset:
    graphs: list[Graph]
    num_classes: int
    name: str = ""
    label_values: list[int] = field(default_factory=list)  # original label of each dense class
    feature_policy: str | None = None

    @property
    def feature_dim(self) -> int:
        if not self.graphs or self.graphs[0].features is None:
            return 0
        return self.graphs[0].features.shape[1]

    @property
    def avg_nodes(self) -> float:
        return float(np.mean([g.n for g in self.graphs]))

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=int)

    def __len__(self) -> int:
        return len(self.graphs)

    def subset(self, indices: Sequence[int]) -> list[Graph]:
        return [self.graphs[i] for i in indices]


# --------------------------------------------------------------------------
# TU format
# --------------------------------------------------------------------------


def _read_ints(path: Path) -> list[list[int]]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([int(tok) for tok in line.replace(",", " ").split()])
            except ValueError:
                raise DatasetError(f"{path.name}:{lineno}: not an integer row: {line!r}") from None
    return rows


def parse_tu_dataset(root: str | Path, name: str) -> Dataset:
    """Read ``NAME_A.txt``, ``NAME_graph_indicator.txt``, ``NAME_graph_labels.txt``
    and the optional ``NAME_node_labels.txt`` from ``root`` (or ``root/NAME``).

    Graph labels are remapped to 0..C-1 in sorted order of the original values.
    Edges are symmetrised and self-loops dropped. Node features are left unset;
    see :func:`build_features`.
    """
    root = Path(root)
    if not (root / f"{name}_A.txt").exists() and (root / name).is_dir():
        root = root / name
    paths = {k: root / f"{name}_{k}.txt" for k in ("A", "graph_indicator", "graph_labels")}
    for p in paths.values():
        if not p.exists():
            raise DatasetError(f"missing mandatory file {p}")

    indicator = np.array([r[0] for r in _read_ints(paths["graph_indicator"])], dtype=int)
    raw_labels = [r[0] for r in _read_ints(paths["graph_labels"])]
    num_graphs = len(raw_labels)
    if indicator.size == 0:
        raise DatasetError("graph indicator is empty")
    if indicator.min() < 1 or indicator.max() > num_graphs:
        raise DatasetError(
            f"graph indicator references graph ids outside 1..{num_graphs}"
        )
    counts = np.bincount(indicator, minlength=num_graphs + 1)[1:]
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise DatasetError(f"graph {empty[0] + 1} has no nodes")

    # first global node id (0-based) of each graph, assuming contiguous blocks
    order = np.argsort(indicator, kind="stable")
    local = np.empty_like(indicator)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    local[order] = np.arange(indicator.size) - np.repeat(starts, counts)

    adjs = [np.zeros((c, c), dtype=np.int8) for c in counts]
    with open(paths["A"]) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                i, j = (int(tok) for tok in line.split(","))
            except ValueError:
                raise DatasetError(f"{paths['A'].name}:{lineno}: expected 'i, j', got {line!r}") from None
            if not (1 <= i <= indicator.size and 1 <= j <= indicator.size):
                raise DatasetError(f"{paths['A'].name}:{lineno}: node id out of range")
            gi, gj = indicator[i - 1], indicator[j - 1]
            if gi != gj:
                raise DatasetError(
                    f"{paths['A'].name}:{lineno}: edge ({i}, {j}) crosses graphs {gi} and {gj}"
                )
            if i == j:
                continue
            a = adjs[gi - 1]
            a[local[i - 1], local[j - 1]] = 1
            a[local[j - 1], local[i - 1]] = 1

    node_labels = None
    nl_path = root / f"{name}_node_labels.txt"
    if nl_path.exists():
        node_labels = np.array([r[0] for r in _read_ints(nl_path)], dtype=int)
        if node_labels.size != indicator.size:
            raise DatasetError(
                f"{nl_path.name} has {node_labels.size} rows for {indicator.size} nodes"
            )

    label_values = sorted(set(raw_labels))
    remap = {v: k for k, v in enumerate(label_values)}
    graphs = []
    for g in range(num_graphs):
        idx = order[starts[g] : starts[g] + counts[g]]
        graphs.append(
            Graph(
                adjacency=adjs[g],
                label=remap[raw_labels[g]],
                node_labels=None if node_labels is None else node_labels[idx],
            )
        )
    return Dataset(graphs=graphs, num_classes=len(label_values), name=name, label_values=label_values)


def write_tu_dataset(dataset: Dataset, root: str | Path, name: str | None = None) -> Path:
    """Write ``dataset`` as TU text files under ``root/NAME``; inverse of the parser."""
    name = name or dataset.name or "DATA"
    out = Path(root) / name
    out.mkdir(parents=True, exist_ok=True)
    labels = dataset.label_values or list(range(dataset.num_classes))
    offset = 0
    edges, indicator, glabels, nlabels = [], [], [], []
    for gid, g in enumerate(dataset.graphs, 1):
        rows, cols = np.nonzero(g.adjacency)
        edges.extend(f"{r + offset + 1}, {c + offset + 1}\n" for r, c in zip(rows, cols))
        indicator.extend(f"{gid}\n" for _ in range(g.n))
        glabels.append(f"{labels[g.label]}\n")
        if g.node_labels is not None:
            nlabels.extend(f"{v}\n" for v in g.node_labels)
        offset += g.n
    (out / f"{name}_A.txt").write_text("".join(edges))
    (out / f"{name}_graph_indicator.txt").write_text("".join(indicator))
    (out / f"{name}_graph_labels.txt").write_text("".join(glabels))
    if nlabels:
        (out / f"{name}_node_labels.txt").write_text("".join(nlabels))
    return out


# --------------------------------------------------------------------------
# node features
# --------------------------------------------------------------------------

FEATURE_POLICIES = ("node-label-onehot", "degree-onehot", "constant")


def build_features(dataset: Dataset, policy: str = "node-label-onehot", cap_degree: int = 64) -> Dataset:
    """Return a copy of ``dataset`` whose graphs carry an (n, T) feature matrix.

    ``node-label-onehot``: T = number of distinct node labels in the dataset.
    ``degree-onehot``: T = min(max degree, cap_degree) + 1; degrees above the cap
    share the top bin. ``constant``: T = 1, all ones.
    """
    if policy not in FEATURE_POLICIES:
        raise DatasetError(f"unknown feature policy {policy!r}; choose from {FEATURE_POLICIES}")
    graphs = dataset.graphs
    if policy == "node-label-onehot":
        if any(g.node_labels is None for g in graphs):
            raise DatasetError(
                f"{dataset.name or 'dataset'} has no node labels file; use policy 'degree-onehot'"
            )
        values = np.unique(np.concatenate([g.node_labels for g in graphs]))
        index = {v: k for k, v in enumerate(values)}
        width = len(values)

        def feats(g):
            return np.eye(width)[[index[v] for v in g.node_labels]]

    elif policy == "degree-onehot":
        width = min(max(int(g.degrees().max(initial=0)) for g in graphs), cap_degree) + 1

        def feats(g):
            return np.eye(width)[np.minimum(g.degrees(), width - 1)]

    else:
        width = 1

        def feats(g):
            return np.ones((g.n, 1))

    new = [replace(g, features=feats(g).astype(np.float64)) for g in graphs]
    return replace(dataset, graphs=new, feature_policy=policy)


def default_feature_policy(dataset: Dataset) -> str:
    """Node-label one-hot when node labels exist, degree one-hot otherwise."""
    return "node-label-onehot" if all(g.node_labels is not None for g in dataset.graphs) else "degree-onehot"


def load_dataset(root: str | Path, name: str, policy: str | None = None, cap_degree: int = 64) -> Dataset:
    raw = parse_tu_dataset(root, name)
    return build_features(raw, policy or default_feature_policy(raw), cap_degree=cap_degree)


# --------------------------------------------------------------------------
# folds
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[tuple[int, ...], ...]
    seed: int
    relaxed: bool = False  # some class had fewer members than folds

    def __len__(self) -> int:
        return len(self.folds)

    def split(self, fold: int) -> tuple[list[int], list[int]]:
        """(train indices, validation indices) with ``fold`` held out."""
        val = list(self.folds[fold])
        train = sorted(i for f, idx in enumerate(self.folds) if f != fold for i in idx)
        return train, val


def stratified_kfold(labels: Sequence[int] | Dataset, k: int = 10, seed: int = 0) -> FoldPlan:
    """Seeded stratified partition into ``k`` folds.

    Each class is shuffled and dealt round-robin; the starting fold for each class
    continues where the previous class stopped so fold sizes differ by at most one.
    """
    labels = labels.labels if isinstance(labels, Dataset) else np.asarray(labels, dtype=int)
    n = len(labels)
    if k > n:
        raise DatasetError(f"cannot make {k} folds from {n} graphs")
    if k < 2:
        raise DatasetError("need at least 2 folds")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    relaxed = False
    cursor = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if len(members) < k:
            relaxed = True
        rng.shuffle(members)
        for m in members:
            folds[cursor % k].append(int(m))
            cursor += 1
    if relaxed:
        logger.warning("some class has fewer than %d members; stratification is best-effort", k)
    return FoldPlan(tuple(tuple(sorted(f)) for f in folds), seed=seed, relaxed=relaxed)


def stratified_subset(labels: Sequence[int], fraction: float, seed: int) -> list[int]:
    """Seeded stratified sample holding ``fraction`` of the indices (at least one)."""
    if not 0 < fraction <= 1:
        raise DatasetError(f"fraction must lie in (0, 1], got {fraction}")
    labels = np.asarray(labels, dtype=int)
    total = max(1, int(round(fraction * len(labels))))
    rng = np.random.default_rng(seed)
    classes, counts = np.unique(labels, return_counts=True)
    quota = np.floor(counts * total / len(labels)).astype(int)
    # hand leftover slots to the classes with the largest remainders
    remainder = counts * total / len(labels) - quota
    for c in np.argsort(-remainder, kind="stable")[: total - quota.sum()]:
        quota[c] += 1
    chosen = []
    for c, q in zip(classes, quota):
        members = np.flatnonzero(labels == c)
        rng.shuffle(members)
        chosen.extend(int(m) for m in members[:q])
    return sorted(chosen)


# --------------------------------------------------------------------------
# batching
# --------------------------------------------------------------------------


@dataclass
class GraphBatch:
    features: np.ndarray  # (B, N_max, T)
    adjacency: np.ndarray  # (B, N_max, N_max)
    node_mask: np.ndarray  # (B, N_max)
    labels: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def n_max(self) -> int:
        return self.features.shape[1]


def make_batch(graphs: Sequence[Graph], n_max: int | None = None) -> GraphBatch:
    if not graphs:
        raise DatasetError("make_batch: empty graph list")
    if any(g.features is None for g in graphs):
        raise DatasetError("make_batch: graphs have no features; call build_features first")
    largest = max(g.n for g in graphs)
    if n_max is None:
        n_max = largest
    elif n_max < largest:
        raise DatasetError(f"make_batch: N_max={n_max} is below the largest graph ({largest} nodes)")
    dim = graphs[0].features.shape[1]
    b = len(graphs)
    feats = np.zeros((b, n_max, dim))
    adj = np.zeros((b, n_max, n_max))
    mask = np.zeros((b, n_max))
    for i, g in enumerate(graphs):
        if g.features.shape[1] != dim:
            raise DatasetError("make_batch: graphs disagree on feature dimension")
        feats[i, : g.n] = g.features
        adj[i, : g.n, : g.n] = g.adjacency
        mask[i, : g.n] = 1.0
    labels = np.array([g.label for g in graphs], dtype=int)
    return GraphBatch(feats, adj, mask, labels)


# --------------------------------------------------------------------------
# synthetic toy set
# --------------------------------------------------------------------------


def cycle_graph(n: int) -> np.ndarray:
    a = np.zeros((n, n), dtype=np.int8)
    for i in range(n):
        a[i, (i + 1) % n] = a[(i + 1) % n, i] = 1
    return a


def star_graph(n: int) -> np.ndarray:
    a = np.zeros((n, n), dtype=np.int8)
    a[0, 1:] = a[1:, 0] = 1
    return a


def toy_dataset(num_graphs: int = 20, seed: int = 0, sizes: Sequence[int] = (4, 5, 6, 7)) -> Dataset:
    """Cycles (class 0) against stars (class 1), degree one-hot features.

    Every node of a cycle has degree 2 while star leaves have degree 1, so the
    mean of the degree one-hot features separates the classes. Nodes are randomly
    relabelled so node order carries no signal.
    """
    rng = np.random.default_rng(seed)
    graphs = []
    for i in range(num_graphs):
        label = i % 2
        n = int(rng.choice(sizes))
        a = cycle_graph(n) if label == 0 else star_graph(n)
        perm = rng.permutation(n)
        graphs.append(Graph(adjacency=a[np.ix_(perm, perm)], label=label))
    raw = Dataset(graphs=graphs, num_classes=2, name="TOY", label_values=[0, 1])
    # fixed width so independently drawn toy sets share feature dimension
    width = max(sizes)
    feats = [replace(g, features=np.eye(width)[g.degrees()]) for g in raw.graphs]
    return replace(raw, graphs=feats, feature_policy="degree-onehot")
