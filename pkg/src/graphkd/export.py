"""Export generated graphs as DOT files or JSON lines."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .generator import GeneratorConfig, generate, sample_latent
from .models import ModelParams
from .tensor import no_grad

EXPORT_FORMATS = ("dot", "jsonl")


def edge_list(adj: np.ndarray) -> list[list[int]]:
    """Upper-triangle edges of a symmetric 0/1 matrix as [i, j] pairs, i < j."""
    rows, cols = np.nonzero(np.triu(adj, 1))
    return [[int(i), int(j)] for i, j in zip(rows, cols)]


def to_dot(adj: np.ndarray, name: str = "G") -> str:
    lines = [f"graph {name} {{"]
    lines += [f"  {i};" for i in range(adj.shape[0])]
    lines += [f"  {i} -- {j};" for i, j in edge_list(adj)]
    lines.append("}")
    return "\n".join(lines) + "\n"


def sample_graphs(config: GeneratorConfig, params: ModelParams, count: int, seed: int = 0):
    """(A_hard, F) arrays for ``count`` graphs drawn from the generator."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    with no_grad():
        g = generate(config, params, sample_latent(count, config.latent_dim, np.random.default_rng(seed)))
    return g.adj_hard.astype(np.int64), g.features.data


def export_graphs(config: GeneratorConfig, params: ModelParams, count: int, fmt: str, out: str | Path, seed: int = 0):
    """Write ``count`` generated graphs under ``out``; returns the written paths."""
    if fmt not in EXPORT_FORMATS:
        raise ValueError(f"unknown export format {fmt!r}; choose from {EXPORT_FORMATS}")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    adjs, feats = sample_graphs(config, params, count, seed)
    if fmt == "dot":
        paths = []
        for i, a in enumerate(adjs):
            path = out / f"graph_{i:04d}.dot"
            path.write_text(to_dot(a, f"g{i}"))
            paths.append(path)
        return paths
    path = out / "graphs.jsonl"
    with open(path, "w") as fh:
        for i, (a, f) in enumerate(zip(adjs, feats)):
            row = {"index": i, "num_nodes": int(a.shape[0]), "edges": edge_list(a), "features": f.tolist()}
            fh.write(json.dumps(row) + "\n")
    return [path]


def read_jsonl_graphs(path: str | Path) -> list[tuple[np.ndarray, np.ndarray]]:
    """Inverse of the JSONL export: (A_hard, F) per row."""
    graphs = []
    for line in Path(path).read_text().splitlines():
        row = json.loads(line)
        a = np.zeros((row["num_nodes"], row["num_nodes"]), dtype=np.int64)
        for i, j in row["edges"]:
            a[i, j] = a[j, i] = 1
        graphs.append((a, np.asarray(row["features"], dtype=np.float64)))
    return graphs
