"""Write MUTAG as TU text files from the copy bundled in the pyGPs sdist.

Usage: python scripts/mutag_to_tu.py path/to/MUTAG.npz data/
"""
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp


def main(npz_path: str, out_root: str) -> None:
    d = np.load(npz_path, allow_pickle=True)
    adj = sp.csr_matrix(
        (d["adj_data"], d["adj_indice"], d["adj_indptr"]), shape=tuple(d["adj_shape"])
    ).tocoo()
    out = Path(out_root) / "MUTAG"
    out.mkdir(parents=True, exist_ok=True)
    order = np.lexsort((adj.col, adj.row))
    with open(out / "MUTAG_A.txt", "w") as fh:
        for i, j in zip(adj.row[order], adj.col[order]):
            fh.write(f"{i + 1}, {j + 1}\n")
    graph_ind = d["graph_ind"].ravel().astype(int)
    (out / "MUTAG_graph_indicator.txt").write_text("".join(f"{g}\n" for g in graph_ind))
    labels = d["labels"].ravel().astype(int)
    (out / "MUTAG_graph_labels.txt").write_text("".join(f"{y}\n" for y in labels))
    node_labels = d["responses"].ravel().astype(int) - 1
    (out / "MUTAG_node_labels.txt").write_text("".join(f"{y}\n" for y in node_labels))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
