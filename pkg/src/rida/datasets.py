"""Convert raw citation-network releases into the TSV dataset layout.

Two raw formats are understood:

* LINQS ``<name>.content`` / ``<name>.cites`` pairs (Cora).
* Planetoid ``ind.<name>.{x,tx,allx,y,ty,ally,graph,test.index}`` pickles
  (CiteSeer, PubMed).

Both are symmetrized.  Self-loops and duplicate citations are dropped and the
graph is reduced to its largest connected component.
"""

from pathlib import Path
import pickle

import numpy as np
import scipy.sparse as sp

from .exceptions import DatasetFormatError
from .graphio import AttributeMatrix, Graph, largest_connected_component, save_dataset


def _undirected(pairs, n):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    pairs = np.unique(np.sort(pairs, axis=1), axis=0)
    return Graph(n, pairs)


def read_linqs(content_path, cites_path):
    """Parse a LINQS ``.content`` / ``.cites`` pair.

    Vertices keep the order of the content file.  Class names are numbered in
    sorted order.  Citations that mention unknown papers are ignored.
    """
    ids, rows, names = [], [], []
    with open(content_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if len(parts) < 3:
                raise DatasetFormatError(content_path, lineno, "too few fields")
            ids.append(parts[0])
            rows.append([float(t) for t in parts[1:-1]])
            names.append(parts[-1])
    index = {pid: i for i, pid in enumerate(ids)}
    pairs = []
    with open(cites_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if len(parts) != 2:
                raise DatasetFormatError(cites_path, lineno, "expected two paper ids")
            if parts[0] in index and parts[1] in index:
                pairs.append((index[parts[0]], index[parts[1]]))
    classes = {name: i for i, name in enumerate(sorted(set(names)))}
    labels = np.array([classes[name] for name in names], dtype=np.int64)
    return _undirected(pairs, len(ids)), AttributeMatrix(np.array(rows)), labels


def read_planetoid(directory, name):
    """Parse the Planetoid pickles for ``name`` (e.g. ``"citeseer"``).

    Test vertices missing from the feature pickles get zero features.  Vertices
    without any label are dropped before the component search.
    """
    directory = Path(directory)
    obj = {}
    for key in ("x", "y", "tx", "ty", "allx", "ally", "graph"):
        with open(directory / f"ind.{name}.{key}", "rb") as fh:
            obj[key] = pickle.load(fh, encoding="latin1")
    test_index = [int(t) for t in (directory / f"ind.{name}.test.index").read_text().split()]
    n = max(max(obj["graph"]), max(test_index)) + 1
    d = obj["allx"].shape[1]

    features = sp.lil_matrix((n, d))
    onehot = np.zeros((n, obj["ally"].shape[1]))
    n_all = obj["allx"].shape[0]
    features[:n_all] = obj["allx"]
    onehot[:n_all] = obj["ally"]
    features[test_index] = obj["tx"]
    onehot[test_index] = obj["ty"]

    pairs = [(u, v) for u, nbrs in obj["graph"].items() for v in nbrs]
    graph = _undirected(pairs, n)
    labelled = onehot.sum(axis=1) > 0
    labels = np.where(labelled, onehot.argmax(axis=1), -1)

    keep = np.flatnonzero(labelled)
    remap = np.full(n, -1, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    e = graph.edges
    inside = (remap[e[:, 0]] >= 0) & (remap[e[:, 1]] >= 0)
    graph = Graph(keep.size, remap[e[inside]])
    attrs = AttributeMatrix(features.tocsr()[keep].toarray())
    return graph, attrs, labels[keep]


def convert(graph, attrs, labels, out_dir):
    """Reduce to the largest component and write the TSV files."""
    graph, attrs, labels = largest_connected_component(graph, attrs, labels)
    # relabel classes densely in case the component lost one
    _, labels = np.unique(labels, return_inverse=True)
    save_dataset(out_dir, graph, attrs, labels)
    return graph, attrs, labels
