"""Attributed-graph containers, text I/O, and graph preprocessing.

A dataset directory holds three tab-separated files::

    edges.tsv    u<TAB>v              one undirected edge per line, u < v
    attrs.tsv    n<TAB>d              header, then v<TAB>j<TAB>value triplets
    labels.tsv   v<TAB>label          one line per vertex

All ids are 0-based.  Only nonzero attribute entries are stored.
"""

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from sklearn.preprocessing import MaxAbsScaler

from .exceptions import DatasetFormatError, DegenerateDegreeError, ValidationError
from .validation import check_fraction, check_labels

EDGES_FILE = "edges.tsv"
ATTRS_FILE = "attrs.tsv"
LABELS_FILE = "labels.tsv"


def _readonly(a):
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on vertices ``0..n-1``.

    ``edges`` is an ``(m, 2)`` integer array with ``u < v`` in every row, sorted
    lexicographically, without duplicates.  Use :meth:`from_edges` to build one
    from arbitrary pairs.
    """

    n: int
    edges: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if self.n < 0:
            raise ValidationError("vertex count must be non-negative")
        if edges.size:
            if edges.min() < 0 or edges.max() >= self.n:
                raise ValidationError(f"edge endpoint outside [0, {self.n})")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ValidationError("self-loops are not allowed")
            if np.any(edges[:, 0] > edges[:, 1]):
                raise ValidationError("edges must be stored with u < v")
            keys = edges[:, 0] * self.n + edges[:, 1]
            if np.any(np.diff(keys) <= 0):
                order = np.argsort(keys, kind="stable")
                if np.unique(keys).size != keys.size:
                    raise ValidationError("duplicate edge")
                edges = edges[order]
        object.__setattr__(self, "edges", _readonly(edges.copy()))

    @classmethod
    def from_edges(cls, n, pairs):
        """Build a graph from unordered pairs, rejecting self-loops and duplicates."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if pairs.size and np.any(pairs[:, 0] == pairs[:, 1]):
            v = int(pairs[pairs[:, 0] == pairs[:, 1]][0, 0])
            raise ValidationError(f"self-loop at vertex {v}")
        ordered = np.sort(pairs, axis=1)
        return cls(n, ordered)

    @classmethod
    def from_adjacency(cls, adj):
        """Build a graph from a symmetric 0/1 adjacency matrix (dense or sparse)."""
        adj = sp.csr_matrix(adj)
        if (adj != adj.T).nnz:
            raise ValidationError("adjacency matrix is not symmetric")
        if adj.diagonal().any():
            raise ValidationError("adjacency matrix has self-loops")
        upper = sp.triu(adj, k=1).tocoo()
        if upper.nnz and not np.all(upper.data == 1):
            raise ValidationError("adjacency entries must be 0 or 1")
        return cls(adj.shape[0], np.column_stack([upper.row, upper.col]))

    @property
    def num_edges(self):
        return int(self.edges.shape[0])

    @cached_property
    def degree(self):
        deg = np.bincount(self.edges.ravel(), minlength=self.n).astype(np.int64)
        return _readonly(deg)

    def adjacency(self, dtype=np.float64):
        """Symmetric CSR adjacency matrix."""
        u, v = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(u), dtype=dtype)
        adj = sp.csr_matrix(
            (data, (np.concatenate([u, v]), np.concatenate([v, u]))),
            shape=(self.n, self.n),
        )
        adj.sort_indices()
        return adj

    def edge_set(self):
        return {(int(u), int(v)) for u, v in self.edges}


@dataclass(frozen=True)
class AttributeMatrix:
    """Dense ``n x d`` attribute values with an observation mask.

    ``mask[i, j]`` is True when entry ``(i, j)`` is observed.  Unobserved
    entries are always stored as 0.
    """

    values: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValidationError(f"attribute matrix must be 2-D, got shape {values.shape}")
        if self.mask is None:
            mask = np.ones(values.shape, dtype=bool)
        else:
            mask = np.array(self.mask, dtype=bool)
            if mask.shape != values.shape:
                raise ValidationError(f"mask shape {mask.shape} != values shape {values.shape}")
        values[~mask] = 0.0
        if not np.all(np.isfinite(values)):
            raise ValidationError("observed attribute values must be finite")
        object.__setattr__(self, "values", _readonly(values))
        object.__setattr__(self, "mask", _readonly(mask))

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def d(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def is_complete(self):
        return bool(self.mask.all())

    def num_missing(self):
        return int(self.mask.size - np.count_nonzero(self.mask))

    def take(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return AttributeMatrix(self.values[rows], self.mask[rows])


@dataclass(frozen=True)
class LabeledSplit:
    """Labels plus a disjoint train/test partition of the vertices."""

    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    n_classes: int
    warnings: tuple = field(default=())

    def semi_supervised_labels(self):
        """Labels with -1 on every vertex outside ``train_idx``."""
        y = np.full(self.labels.shape[0], -1, dtype=np.int64)
        y[self.train_idx] = self.labels[self.train_idx]
        return y


# --------------------------------------------------------------------------
# text I/O


def _lines(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing dataset file: {path}")
    with path.open("r", encoding="ascii", newline="\n") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if line.endswith("\r"):
                raise DatasetFormatError(path, lineno, "CR line ending")
            if line == "":
                raise DatasetFormatError(path, lineno, "empty line")
            yield lineno, line.split("\t")


def _int_field(path, lineno, text):
    try:
        if text.strip() != text or text.startswith("+"):
            raise ValueError
        return int(text, 10)
    except ValueError:
        raise DatasetFormatError(path, lineno, f"not an integer: {text!r}") from None


def _float_field(path, lineno, text):
    try:
        value = float(text)
    except ValueError:
        raise DatasetFormatError(path, lineno, f"not a number: {text!r}") from None
    if not np.isfinite(value):
        raise DatasetFormatError(path, lineno, f"non-finite value: {text!r}")
    return value


def _read_attrs(path):
    it = _lines(path)
    try:
        lineno, header = next(it)
    except StopIteration:
        raise DatasetFormatError(path, 1, "missing 'n<TAB>d' header") from None
    if len(header) != 2:
        raise DatasetFormatError(path, lineno, "header must be 'n<TAB>d'")
    n, d = (_int_field(path, lineno, t) for t in header)
    if n < 0 or d < 0:
        raise DatasetFormatError(path, lineno, "negative dimension in header")
    values = np.zeros((n, d), dtype=np.float64)
    seen = np.zeros((n, d), dtype=bool)
    for lineno, parts in it:
        if len(parts) != 3:
            raise DatasetFormatError(path, lineno, "expected 'v<TAB>j<TAB>value'")
        v = _int_field(path, lineno, parts[0])
        j = _int_field(path, lineno, parts[1])
        value = _float_field(path, lineno, parts[2])
        if not (0 <= v < n and 0 <= j < d):
            raise ValidationError(f"{path}:{lineno}: entry ({v}, {j}) outside {n}x{d}")
        if seen[v, j]:
            raise ValidationError(f"{path}:{lineno}: duplicate entry ({v}, {j})")
        seen[v, j] = True
        values[v, j] = value
    return AttributeMatrix(values)


def read_edges(path, n):
    """Read an ``edges.tsv`` edge list over ``n`` vertices."""
    pairs = []
    seen = set()
    for lineno, parts in _lines(path):
        if len(parts) != 2:
            raise DatasetFormatError(path, lineno, "expected 'u<TAB>v'")
        u = _int_field(path, lineno, parts[0])
        v = _int_field(path, lineno, parts[1])
        if u == v:
            raise ValidationError(f"{path}:{lineno}: self-loop at vertex {u}")
        if not (0 <= u < n and 0 <= v < n):
            raise ValidationError(f"{path}:{lineno}: vertex id outside [0, {n})")
        if u > v:
            raise DatasetFormatError(path, lineno, "edges must be written with u < v")
        if (u, v) in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate edge ({u}, {v})")
        seen.add((u, v))
        pairs.append((u, v))
    return Graph(n, np.array(pairs, dtype=np.int64).reshape(-1, 2))


def _read_labels(path, n):
    labels = np.full(n, -1, dtype=np.int64)
    for lineno, parts in _lines(path):
        if len(parts) != 2:
            raise DatasetFormatError(path, lineno, "expected 'v<TAB>label'")
        v = _int_field(path, lineno, parts[0])
        label = _int_field(path, lineno, parts[1])
        if not 0 <= v < n:
            raise ValidationError(f"{path}:{lineno}: vertex id outside [0, {n})")
        if label < 0:
            raise ValidationError(f"{path}:{lineno}: negative label")
        if labels[v] != -1:
            raise ValidationError(f"{path}:{lineno}: vertex {v} labelled twice")
        labels[v] = label
    missing = np.flatnonzero(labels < 0)
    if missing.size:
        raise ValidationError(f"{path}: no label for vertex {int(missing[0])}")
    return labels


def load_dataset(directory):
    """Read ``edges.tsv``, ``attrs.tsv`` and ``labels.tsv`` from ``directory``.

    Returns
    -------
    graph : Graph
    attributes : AttributeMatrix
        Fully observed.
    labels : ndarray of shape (n,)
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    attributes = _read_attrs(directory / ATTRS_FILE)
    graph = read_edges(directory / EDGES_FILE, attributes.n)
    labels = _read_labels(directory / LABELS_FILE, attributes.n)
    return graph, attributes, labels


def format_float(value):
    """Shortest text that parses back to exactly ``value``."""
    return repr(float(value))


def write_edges(path, graph):
    with Path(path).open("w", encoding="ascii", newline="\n") as fh:
        for u, v in graph.edges:
            fh.write(f"{u}\t{v}\n")


def save_dataset(directory, graph, attributes, labels):
    """Write a dataset directory readable by :func:`load_dataset`.

    Only observed nonzero attribute entries are written.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    labels = check_labels(labels, graph.n)
    if attributes.n != graph.n:
        raise ValidationError("attribute rows do not match vertex count")
    write_edges(directory / EDGES_FILE, graph)
    with (directory / ATTRS_FILE).open("w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{attributes.n}\t{attributes.d}\n")
        rows, cols = np.nonzero(attributes.values)
        for v, j in zip(rows, cols):
            fh.write(f"{v}\t{j}\t{format_float(attributes.values[v, j])}\n")
    with (directory / LABELS_FILE).open("w", encoding="ascii", newline="\n") as fh:
        for v, label in enumerate(labels):
            fh.write(f"{v}\t{label}\n")


# --------------------------------------------------------------------------
# preprocessing


def largest_connected_component(graph, attributes, labels, *, return_index=False):
    """Restrict a graph to its largest connected component.

    Vertices keep their relative order (ascending original id).  When several
    components share the maximum size, the one holding the smallest vertex id
    wins.
    """
    labels = np.asarray(labels)
    if graph.n == 0:
        kept = np.zeros(0, dtype=np.int64)
    else:
        _, comp = connected_components(graph.adjacency(), directed=False)
        sizes = np.bincount(comp)
        first_min = np.full(sizes.size, graph.n, dtype=np.int64)
        np.minimum.at(first_min, comp, np.arange(graph.n))
        best = max(range(sizes.size), key=lambda c: (sizes[c], -first_min[c]))
        kept = np.flatnonzero(comp == best)
    remap = np.full(graph.n, -1, dtype=np.int64)
    remap[kept] = np.arange(kept.size)
    e = graph.edges
    inside = (remap[e[:, 0]] >= 0) & (remap[e[:, 1]] >= 0)
    sub = Graph(kept.size, remap[e[inside]])
    out = (sub, attributes.take(kept), labels[kept].copy())
    if return_index:
        return out + (kept,)
    return out


def normalize_adjacency(graph, self_loops):
    """Symmetric degree normalization of the adjacency matrix.

    With ``self_loops`` this is ``D'^-1/2 (A + I) D'^-1/2`` where ``D'`` is the
    degree matrix of ``A + I``; otherwise ``D^-1/2 A D^-1/2``.

    Returns
    -------
    scipy.sparse.csr_matrix of shape (n, n)
    """
    adj = graph.adjacency()
    if self_loops:
        adj = adj + sp.identity(graph.n, format="csr")
    deg = np.asarray(adj.sum(axis=1)).ravel()
    if np.any(deg == 0):
        v = int(np.flatnonzero(deg == 0)[0])
        raise DegenerateDegreeError(f"vertex {v} is isolated; cannot normalize without self-loops")
    scale = sp.diags(1.0 / np.sqrt(deg))
    out = (scale @ adj @ scale).tocsr()
    out.sort_indices()
    return out


def split_labels(labels, fraction, seed):
    """Uniformly random labeled/unlabeled split.

    ``round(fraction * n)`` vertices (half rounds up) go to ``train_idx``; the
    rest to ``test_idx``.  Both index arrays are sorted.
    """
    fraction = check_fraction(fraction, "fraction", low_open=True, high_open=True)
    labels = check_labels(labels)
    n = labels.shape[0]
    n_train = int(np.floor(fraction * n + 0.5))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    train_idx = np.sort(perm[:n_train])
    test_idx = np.sort(perm[n_train:])
    n_classes = int(labels.max()) + 1 if n else 0
    warnings = []
    if n_train < n_classes:
        warnings.append(
            f"only {n_train} labeled vertices for {n_classes} classes"
        )
    return LabeledSplit(
        labels=_readonly(labels.copy()),
        train_idx=_readonly(train_idx),
        test_idx=_readonly(test_idx),
        n_classes=n_classes,
        warnings=tuple(warnings),
    )


def row_normalize_attributes(attributes):
    """Divide each row by the L1 norm of its observed entries.

    Rows whose observed entries sum to zero stay all-zero; the mask is kept.
    """
    values = attributes.values
    norms = np.abs(np.where(attributes.mask, values, 0.0)).sum(axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return AttributeMatrix(values / safe[:, None], attributes.mask)


def scale_attributes(attributes):
    """Scale each column by its largest observed magnitude.

    Non-negative attributes land in [0, 1]; binary attributes are unchanged.
    All-zero columns stay zero.  The mask is kept.
    """
    values = MaxAbsScaler().fit_transform(attributes.values)
    return AttributeMatrix(values, attributes.mask)
