"""Depth-plus GNN surrogate with local-global attention.

Features are initialized so observed entries sit above a floor of ``1 - omega``
and missing ones at 0.  They are then propagated ``K`` hops with a decaying
neighbour weight ``lambda_k = delta * (1 - gamma) ** k``.  A two-layer linear
head trained with cross-entropy turns the last layer into class scores.  Its
argmax gives the pseudo-labels that drive the attack.

Attention
---------
For layer ``k`` the plain update ``X~ = lam * A_hat X + (1 - lam) X`` is
computed first.  It then stands in for ``X^(k)`` inside the per-vertex
coefficient::

    C_v = cos(X~_v, X^(k-1)_v) * cos(X~_v, X^(0)_v)

and the layer is re-formed as ``lam * C_v * (A_hat X)_v + (1 - lam * C_v) * X_v``.
With the bifocal processor on, cosines for a vertex only use the coordinates
it observed.  Fully observed vertices therefore use every coordinate.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import _nn
from .graphio import AttributeMatrix, format_float, normalize_adjacency, scale_attributes
from .validation import (
    check_consistent_graph,
    check_fraction,
    check_labels,
    check_positive_int,
    check_positive_real,
    labeled_index,
)


@dataclass(frozen=True)
class PropagationConfig:
    K: int = 16
    delta: float = 0.1
    gamma: float = 0.01
    omega: float = 0.9
    use_global_attention: bool = True
    use_local_attention: bool = True
    use_bfp: bool = True

    def __post_init__(self):
        check_positive_int(self.K, "K")
        check_positive_real(self.delta, "delta", allow_zero=True)
        check_fraction(self.gamma, "gamma", high_open=True)
        check_fraction(self.omega, "omega")

    @property
    def attention(self):
        return self.use_global_attention or self.use_local_attention


@dataclass(frozen=True)
class LayerTrace:
    """Propagation output.

    ``layers`` holds ``X^(0)..X^(K)``.  With ``keep_layers=False`` it holds only
    the first and last.  ``coefficients`` is ``(n, K)``, or None when attention
    is off.
    """

    layers: tuple
    coefficients: np.ndarray = None

    @property
    def initial(self):
        return self.layers[0]

    @property
    def final(self):
        return self.layers[-1]


@dataclass
class TransformParams:
    """Affine maps ``d -> hidden -> c``: ``Y = (X @ W2 + b1) @ W1 + b2``."""

    W1: np.ndarray
    W2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    history: list = field(default_factory=list, repr=False)

    def as_dict(self):
        return {"W1": self.W1, "W2": self.W2, "b1": self.b1, "b2": self.b2}

    @classmethod
    def zeros(cls, d, hidden, c):
        return cls(
            W1=np.zeros((hidden, c)),
            W2=np.zeros((d, hidden)),
            b1=np.zeros(hidden),
            b2=np.zeros(c),
        )


def initialize_features(attributes, omega):
    """Missing entries become 0; observed ``x`` becomes ``x * omega + (1 - omega)``.

    ``attributes`` should already be scaled into [0, 1] (see
    :func:`rida.graphio.scale_attributes`) so that every observed entry lands in
    ``[1 - omega, 1]``, apart from the 0 that marks a missing one.
    """
    return np.where(attributes.mask, attributes.values * omega + (1.0 - omega), 0.0)


def decay(k, delta, gamma):
    if k < 1:
        raise ValueError(f"layer index must be >= 1, got {k}")
    return delta * (1.0 - gamma) ** k


def _masked_cosine(a, b, weight):
    if weight is None:
        dot = np.einsum("ij,ij->i", a, b)
        na = np.einsum("ij,ij->i", a, a)
        nb = np.einsum("ij,ij->i", b, b)
    else:
        aw = a * weight
        dot = np.einsum("ij,ij->i", aw, b)
        na = np.einsum("ij,ij->i", aw, a)
        nb = np.einsum("ij,ij->i", b * weight, b)
    denom = np.sqrt(na) * np.sqrt(nb)
    out = np.zeros_like(dot)
    ok = denom > 0
    out[ok] = dot[ok] / denom[ok]
    return np.clip(out, -1.0, 1.0)


def attention_coefficients(cand, prev, init, observed=None, *, local=True, global_=True):
    """Row-wise local-global coefficients for a whole layer.

    Parameters
    ----------
    cand, prev, init : ndarray of shape (n, d)
        Candidate layer, previous layer, and initial features.
    observed : ndarray of bool, shape (n, d), optional
        Restricts each row's cosines to its True coordinates.
    """
    weight = None if observed is None else observed.astype(np.float64)
    coef = np.ones(cand.shape[0])
    if local:
        coef = coef * _masked_cosine(cand, prev, weight)
    if global_:
        coef = coef * _masked_cosine(cand, init, weight)
    return coef


def lg_attention(x_cand, x_prev, x_init, coords=None, *, local=True, global_=True):
    """Coefficient for a single vertex.

    ``coords`` lists the coordinates to compare on; None means all.
    """
    x_cand, x_prev, x_init = (np.asarray(r, dtype=np.float64) for r in (x_cand, x_prev, x_init))
    if coords is not None:
        coords = np.asarray(coords, dtype=np.int64)
        x_cand, x_prev, x_init = x_cand[coords], x_prev[coords], x_init[coords]
    c = attention_coefficients(
        x_cand[None, :], x_prev[None, :], x_init[None, :], local=local, global_=global_
    )
    return float(c[0])


@dataclass(frozen=True)
class BFPPartition:
    complete: np.ndarray
    incomplete: np.ndarray
    observed: dict

    def coords(self, v):
        """Observed coordinates of ``v``, or None (all) for complete vertices."""
        return self.observed.get(int(v))


def bfp_partition(mask):
    """Split vertices into attribute-complete and attribute-incomplete sets."""
    mask = np.asarray(mask, dtype=bool)
    full = mask.all(axis=1)
    complete = np.flatnonzero(full)
    incomplete = np.flatnonzero(~full)
    observed = {int(v): np.flatnonzero(mask[v]) for v in incomplete}
    return BFPPartition(complete, incomplete, observed)


def propagate(features, adj_hat, cfg, mask=None, *, keep_layers=True):
    """Decayed K-hop propagation, optionally refined by attention.

    Parameters
    ----------
    features : ndarray of shape (n, d)
        Initialized features ``X^(0)``.
    adj_hat : sparse matrix of shape (n, n)
        Normalized adjacency *without* self-loops.
    cfg : PropagationConfig
    mask : ndarray of bool, shape (n, d), optional
        Observation mask; only consulted when ``cfg.use_bfp`` is set.

    Returns
    -------
    LayerTrace
    """
    x0 = np.asarray(features, dtype=np.float64)
    observed = None
    if cfg.attention and cfg.use_bfp and mask is not None:
        observed = np.asarray(mask, dtype=bool)
        if observed.all():
            observed = None
    layers = [x0]
    coefs = np.empty((x0.shape[0], cfg.K)) if cfg.attention else None
    prev = x0
    for k in range(1, cfg.K + 1):
        lam = decay(k, cfg.delta, cfg.gamma)
        agg = adj_hat @ prev
        step = agg - prev
        cand = prev + lam * step
        if cfg.attention:
            c = attention_coefficients(
                cand, prev, x0, observed,
                local=cfg.use_local_attention, global_=cfg.use_global_attention,
            )
            coefs[:, k - 1] = c
            nxt = prev + (lam * c)[:, None] * step
        else:
            nxt = cand
        if keep_layers:
            layers.append(nxt)
        prev = nxt
    if not keep_layers and cfg.K > 0:
        layers.append(prev)
    return LayerTrace(tuple(layers), coefs)


def transform_loss_and_grad(params, features, targets):
    """Cross-entropy of the linear head on ``features`` and its gradients."""
    hidden = features @ params["W2"] + params["b1"]
    logits = hidden @ params["W1"] + params["b2"]
    loss, g_logits = _nn.cross_entropy(logits, targets)
    g_hidden = g_logits @ params["W1"].T
    grads = {
        "W1": hidden.T @ g_logits,
        "b2": g_logits.sum(axis=0),
        "W2": features.T @ g_hidden,
        "b1": g_hidden.sum(axis=0),
    }
    return loss, grads


def train_transform(features, labels, train_idx, *, n_classes=None, epochs=200, lr=0.01,
                    hidden=16, seed=0):
    """Fit the two affine maps on the labeled rows by full-batch Adam."""
    labels = np.asarray(labels, dtype=np.int64)
    train_idx = np.asarray(train_idx, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels[train_idx].max()) + 1
    d = features.shape[1]
    rng = np.random.default_rng(seed)
    params = {
        "W2": _nn.glorot(rng, d, hidden),
        "W1": _nn.glorot(rng, hidden, n_classes),
        "b1": np.zeros(hidden),
        "b2": np.zeros(n_classes),
    }
    x_train = features[train_idx]
    y_train = labels[train_idx]
    history = _nn.fit_adam(
        params,
        lambda p: transform_loss_and_grad(p, x_train, y_train),
        epochs=epochs, lr=lr, where="feature transformation",
    )
    return TransformParams(history=history, **params)


def predict(params, features):
    """Class scores and argmax pseudo-labels (ties go to the lowest class id)."""
    logits = (features @ params.W2 + params.b1) @ params.W1 + params.b2
    return logits, np.argmax(logits, axis=1)


def save_params(params, path):
    """Dump the head as consecutive row-major matrices, each headed ``rows cols``.

    Order: W1, W2, b1, b2 (biases as single-row matrices).
    """
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for name in ("W1", "W2", "b1", "b2"):
            m = np.atleast_2d(getattr(params, name))
            fh.write(f"{m.shape[0]} {m.shape[1]}\n")
            for row in m:
                fh.write(" ".join(format_float(v) for v in row) + "\n")


def load_params(path):
    with open(path, encoding="ascii") as fh:
        lines = fh.read().splitlines()
    out = {}
    pos = 0
    for name in ("W1", "W2", "b1", "b2"):
        rows, cols = (int(t) for t in lines[pos].split())
        block = [[float(t) for t in lines[pos + 1 + r].split()] for r in range(rows)]
        m = np.array(block, dtype=np.float64).reshape(rows, cols)
        out[name] = m.ravel() if name.startswith("b") else m
        pos += rows + 1
    return TransformParams(**out)


class DepthPlusGNN(ClassifierMixin, BaseEstimator):
    """Transductive Depth-plus GNN classifier.

    ``fit(X, y, graph)`` follows the scikit-learn semi-supervised convention:
    ``y`` holds -1 for unlabeled vertices.  After fitting, ``transduction_``
    holds a label for every vertex and ``predict(vertices)`` reads from it.

    Parameters
    ----------
    K, delta, gamma, omega : propagation hyperparameters.
    use_global_attention, use_local_attention, use_bfp : bool
        Ablation switches.  All False gives plain decayed propagation.
    hidden, epochs, lr : head training settings.
    random_state : int
    """

    def __init__(self, K=16, delta=0.1, gamma=0.01, omega=0.9, use_global_attention=True,
                 use_local_attention=True, use_bfp=True, hidden=16, epochs=200, lr=0.01,
                 random_state=0):
        self.K = K
        self.delta = delta
        self.gamma = gamma
        self.omega = omega
        self.use_global_attention = use_global_attention
        self.use_local_attention = use_local_attention
        self.use_bfp = use_bfp
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.random_state = random_state

    def _config(self):
        return PropagationConfig(
            K=self.K, delta=self.delta, gamma=self.gamma, omega=self.omega,
            use_global_attention=self.use_global_attention,
            use_local_attention=self.use_local_attention,
            use_bfp=self.use_bfp,
        )

    def fit(self, X, y, graph):
        if not isinstance(X, AttributeMatrix):
            X = AttributeMatrix(np.asarray(X, dtype=np.float64))
        check_consistent_graph(graph, X)
        y = check_labels(y, graph.n, allow_unlabeled=True)
        train_idx = labeled_index(y)
        cfg = self._config()
        x_init = initialize_features(scale_attributes(X), cfg.omega)
        adj_hat = normalize_adjacency(graph, self_loops=False)
        self.trace_ = propagate(x_init, adj_hat, cfg, X.mask, keep_layers=False)
        self.classes_ = np.arange(int(y.max()) + 1)
        self.params_ = train_transform(
            self.trace_.final, y, train_idx, n_classes=self.classes_.size,
            epochs=self.epochs, lr=self.lr, hidden=self.hidden, seed=self.random_state,
        )
        self.logits_, self.transduction_ = predict(self.params_, self.trace_.final)
        self.n_features_in_ = X.d
        return self

    def decision_function(self, vertices=None):
        check_is_fitted(self, "transduction_")
        return self.logits_ if vertices is None else self.logits_[np.asarray(vertices)]

    def predict(self, vertices=None):
        check_is_fitted(self, "transduction_")
        if vertices is None:
            return self.transduction_
        return self.transduction_[np.asarray(vertices, dtype=np.int64)]
