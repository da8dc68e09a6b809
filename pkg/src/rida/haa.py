"""Holistic adversarial attack: greedy gradient-guided edge flips.

The attacker first smears the normalized attributes over the graph with the
same decayed propagation weights the Depth-plus GNN uses, giving attack
features ``Xs``.  Then, once per budget unit, it:

1. forms the current adjacency ``Am = A + Ap``;
2. trains a linear two-layer GCN surrogate ``Z = Ã (Ã Xs W2) W1`` on the true
   labels of the labeled vertices;
3. differentiates the negated surrogate loss on pseudo-labels with respect to
   the raw entries of ``Am``, through the self-loop degree normalization;
4. flips the single feasible pair whose first-order change most increases
   the surrogate loss.

Flip diff files hold one ``ADD u v`` or ``DEL u v`` line per flip (u < v) in
application order.
"""

from dataclasses import dataclass, field
from pathlib import Path
import logging
import time

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import _nn
from .dpgnn import decay
from .exceptions import BudgetExhaustedError, DatasetFormatError, ValidationError
from .graphio import AttributeMatrix, Graph, normalize_adjacency, row_normalize_attributes
from .validation import check_consistent_graph, check_fraction, check_labels, labeled_index

log = logging.getLogger(__name__)

ADD = "ADD"
DEL = "DEL"


# --------------------------------------------------------------------------
# pre-attack feature optimization


def build_transition_powers(adj_hat, K):
    """``[T0, ..., T(K-1)]`` with ``T0 = Â`` and ``Tk = Â @ T(k-1)`` (dense)."""
    if K < 1:
        raise ValidationError(f"K must be >= 1, got {K}")
    current = adj_hat.toarray() if sp.issparse(adj_hat) else np.array(adj_hat, dtype=np.float64)
    powers = [current]
    for _ in range(1, K):
        current = np.asarray(adj_hat @ current)
        powers.append(current)
    return powers


def build_propagation_matrix(powers, delta, gamma):
    """Decayed propagation matrix ``Aphi^(K-1)`` from precomputed powers.

    ``Aphi^(0) = I`` and ``Aphi^(k) = lam_k T^(k-1) + (1 - lam_k) Aphi^(k-1)``,
    where ``K = len(powers)``.
    """
    n = powers[0].shape[0]
    aphi = np.eye(n)
    for k in range(1, len(powers)):
        lam = decay(k, delta, gamma)
        aphi = lam * powers[k - 1] + (1.0 - lam) * aphi
    return aphi


def propagation_matrix(adj_hat, K, delta, gamma):
    """Same as :func:`build_propagation_matrix` without keeping every power."""
    if K < 1:
        raise ValidationError(f"K must be >= 1, got {K}")
    n = adj_hat.shape[0]
    aphi = np.eye(n)
    power = None
    for k in range(1, K):
        power = adj_hat.toarray() if power is None else np.asarray(adj_hat @ power)
        lam = decay(k, delta, gamma)
        aphi *= 1.0 - lam
        aphi += lam * power
    return aphi


def optimize_features(aphi, xn, eta):
    """Attack features ``eta * Aphi @ Xn + (1 - eta) * Xn``."""
    xn = np.asarray(xn, dtype=np.float64)
    if eta == 0:
        return xn.copy()
    spread = np.asarray(sp.csr_matrix(xn).T @ np.asarray(aphi).T).T
    return eta * spread + (1.0 - eta) * xn


# --------------------------------------------------------------------------
# surrogate


@dataclass
class SurrogateParams:
    """Weights of the activation-free GCN ``Ã (Ã Xs W2) W1``."""

    W1: np.ndarray
    W2: np.ndarray
    history: list = field(default_factory=list, repr=False)

    def as_dict(self):
        return {"W1": self.W1, "W2": self.W2}


def normalize_self_loops(adj):
    """``D^-1/2 (A + I) D^-1/2`` for a raw, possibly weighted or asymmetric ``A``.

    ``D`` holds the row sums of ``A + I``.  Returns ``(Ã, d)`` with Ã as CSR.
    """
    a = sp.csr_matrix(adj, dtype=np.float64) + sp.identity(adj.shape[0], format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    if np.any(deg <= 0):
        raise ValidationError("non-positive degree in self-loop normalization")
    s = 1.0 / np.sqrt(deg)
    return (sp.diags(s) @ a @ sp.diags(s)).tocsr(), deg


def surrogate_loss_and_grad(params, propagated, targets):
    """Cross-entropy of ``propagated @ W2 @ W1`` and its gradients.

    ``propagated`` is ``Ã Ã Xs`` restricted to the training rows.
    """
    hidden = propagated @ params["W2"]
    logits = hidden @ params["W1"]
    loss, g = _nn.cross_entropy(logits, targets)
    return loss, {"W1": hidden.T @ g, "W2": propagated.T @ (g @ params["W1"].T)}


def train_surrogate(adj, features, labels, train_idx, *, n_classes=None, epochs=100, lr=0.01,
                    hidden=16, seed=0, init=None):
    """Fit the surrogate on the labeled vertices by full-batch Adam.

    ``adj`` is the raw candidate adjacency; self-loop normalization is applied
    here.  ``init`` warm-starts from earlier parameters.
    """
    labels = np.asarray(labels, dtype=np.int64)
    train_idx = np.asarray(train_idx, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels[train_idx].max()) + 1
    a_tilde, _ = normalize_self_loops(adj)
    propagated = a_tilde[train_idx] @ (a_tilde @ features)
    if init is not None:
        params = {"W1": init.W1.copy(), "W2": init.W2.copy()}
    else:
        rng = np.random.default_rng(seed)
        params = {
            "W2": _nn.glorot(rng, features.shape[1], hidden),
            "W1": _nn.glorot(rng, hidden, n_classes),
        }
    y_train = labels[train_idx]
    history = _nn.fit_adam(
        params,
        lambda p: surrogate_loss_and_grad(p, propagated, y_train),
        epochs=epochs, lr=lr, where="surrogate training",
    )
    return SurrogateParams(history=history, **params)


def surrogate_logits(params, adj, features):
    a_tilde, _ = normalize_self_loops(adj)
    return a_tilde @ (a_tilde @ (features @ (params.W2 @ params.W1)))


def attack_loss(params, adj, features, targets):
    """``-mean CE`` of the surrogate against ``targets`` on every vertex."""
    loss, _ = _nn.cross_entropy(np.asarray(surrogate_logits(params, adj, features)), targets)
    return -loss


def attack_gradient(params, adj, features, targets, *, symmetrize=True):
    """Gradient of :func:`attack_loss` with respect to the raw entries of ``adj``.

    Both the ``A + I`` numerator and the two degree factors of the
    normalization are differentiated.  Entry ``(u, v)`` moves only the row
    degree ``d_u``.

    Returns
    -------
    ndarray of shape (n, n)
        Symmetrized as ``(G + G.T) / 2`` unless ``symmetrize`` is False.
    """
    a_tilde, deg = normalize_self_loops(adj)
    s = 1.0 / np.sqrt(deg)
    m = features @ (params.W2 @ params.W1)
    h = np.asarray(a_tilde @ m)
    z = np.asarray(a_tilde @ h)
    _, g_z = _nn.cross_entropy(z, targets)
    g_z = -g_z
    # dL/dÃ for Z = Ã Ã M
    g_at = g_z @ h.T + np.asarray(a_tilde.T @ g_z) @ m.T
    weighted = a_tilde.multiply(g_at)
    through_deg = (np.asarray(weighted.sum(axis=1)).ravel()
                   + np.asarray(weighted.sum(axis=0)).ravel())
    grad = g_at * np.outer(s, s)
    grad -= (through_deg / (2.0 * deg))[:, None]
    if symmetrize:
        grad = 0.5 * (grad + grad.T)
    return grad


# --------------------------------------------------------------------------
# greedy flip loop


@dataclass
class PerturbationState:
    """Bookkeeping for the flip loop.

    ``perturbation`` is the symmetric {-1, 0, +1} matrix ``Ap``; ``flips`` lists
    ``(action, u, v)`` in application order.
    """

    perturbation: np.ndarray
    budget_total: int
    flips: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    surrogate_loss: list = field(default_factory=list)

    @property
    def budget_used(self):
        return len(self.flips)

    @property
    def flipped(self):
        return {(u, v) for _, u, v in self.flips}


def budget_for(num_edges, epsilon):
    # the epsilon guards products such as 0.05 * 100 = 5.000000000000001
    return int(np.floor(num_edges * epsilon + 1e-9))


def flip_scores(grad, adj_cur):
    """Normalized scores: first-order gain in surrogate loss per candidate flip.

    ``-G * (1 - 2 Am)`` with the diagonal zeroed and the global minimum
    subtracted, so every score is non-negative.
    """
    scores = -grad * (1.0 - 2.0 * adj_cur)
    np.fill_diagonal(scores, 0.0)
    scores -= scores.min()
    return scores


def feasible_pairs(adj_cur, flipped):
    """Boolean matrix of pairs ``u < v`` that may be flipped next."""
    n = adj_cur.shape[0]
    ok = np.triu(np.ones((n, n), dtype=bool), k=1)
    if flipped:
        idx = np.array(sorted(flipped), dtype=np.int64)
        ok[idx[:, 0], idx[:, 1]] = False
    deg = adj_cur.sum(axis=1)
    thin = deg < 2
    # deleting an edge at a degree-1 endpoint would isolate it
    ok &= ~((adj_cur > 0) & (thin[:, None] | thin[None, :]))
    return ok


def select_perturbation(grad, adj_cur, flipped=()):
    """Pick the best feasible flip.

    Ties go to the lexicographically smallest ``(u, v)``.

    Returns
    -------
    (u, v, action)
    """
    scores = flip_scores(grad, adj_cur)
    ok = feasible_pairs(adj_cur, set(flipped))
    if not ok.any():
        raise BudgetExhaustedError("no feasible edge flip left")
    scores = np.where(ok, scores, -np.inf)
    flat = int(np.argmax(scores))
    u, v = divmod(flat, scores.shape[1])
    return u, v, (DEL if adj_cur[u, v] > 0 else ADD)


@dataclass(frozen=True)
class AttackConfig:
    K: int = 16
    delta: float = 0.1
    gamma: float = 0.01
    eta: float = 0.05
    epochs: int = 100
    lr: float = 0.01
    hidden: int = 16
    seed: int = 0
    warm_start: bool = False


def attack_features(graph, attributes, cfg):
    """Row-normalize the incomplete attributes and apply the positional blend."""
    xn = row_normalize_attributes(attributes).values
    if cfg.eta == 0:
        return xn.copy()
    aphi = propagation_matrix(normalize_adjacency(graph, self_loops=False), cfg.K, cfg.delta, cfg.gamma)
    return optimize_features(aphi, xn, cfg.eta)


def run_attack(graph, attributes, labels, train_idx, pseudo_labels, epsilon, cfg=AttackConfig(),
               *, features=None, callback=None):
    """Spend the whole budget ``floor(|E| * epsilon)`` on greedy flips.

    Parameters
    ----------
    graph : Graph
    attributes : AttributeMatrix
        The attacker's (incomplete) attributes.
    labels : array of int
        Only entries at ``train_idx`` are read.
    train_idx : array of int
    pseudo_labels : array of int
        Targets for every vertex outside ``train_idx``.
    epsilon : float in (0, 1)
    cfg : AttackConfig
    features : ndarray, optional
        Use these attack features instead of computing them from ``attributes``.
    callback : callable, optional
        Called as ``callback(iteration, state)`` after each flip.

    Returns
    -------
    state : PerturbationState
    perturbed : Graph
    """
    epsilon = check_fraction(epsilon, "epsilon", low_open=True, high_open=True)
    check_consistent_graph(graph, attributes)
    labels = np.asarray(labels, dtype=np.int64)
    train_idx = np.asarray(train_idx, dtype=np.int64)
    targets = np.asarray(pseudo_labels, dtype=np.int64).copy()
    targets[train_idx] = labels[train_idx]
    n_classes = int(max(targets.max(), labels[train_idx].max())) + 1

    xs = attack_features(graph, attributes, cfg) if features is None else np.asarray(features)
    adj = graph.adjacency().toarray()
    state = PerturbationState(np.zeros(adj.shape, dtype=np.int8), budget_for(graph.num_edges, epsilon))
    params = None
    for it in range(state.budget_total):
        adj_m = np.clip(adj + state.perturbation, 0.0, 1.0)
        np.fill_diagonal(adj_m, 0.0)
        adj_sparse = sp.csr_matrix(adj_m)
        params = train_surrogate(
            adj_sparse, xs, labels, train_idx, n_classes=n_classes, epochs=cfg.epochs,
            lr=cfg.lr, hidden=cfg.hidden, seed=cfg.seed + it,
            init=params if cfg.warm_start else None,
        )
        state.surrogate_loss.append(params.history[-1] if params.history else float("nan"))
        grad = attack_gradient(params, adj_sparse, xs, targets)
        try:
            u, v, action = select_perturbation(grad, adj_m, state.flipped)
        except BudgetExhaustedError:
            msg = f"budget exhausted early after {it} of {state.budget_total} flips"
            log.warning(msg)
            state.warnings.append(msg)
            break
        delta = 1 if action == ADD else -1
        state.perturbation[u, v] = state.perturbation[v, u] = delta
        state.flips.append((action, u, v))
        if callback is not None:
            callback(it, state)
    return state, apply_flips(graph, state.flips)


# --------------------------------------------------------------------------
# diff files


def apply_flips(graph, flips):
    """Replay ``(action, u, v)`` flips on ``graph``."""
    edges = graph.edge_set()
    for action, u, v in flips:
        u, v = min(u, v), max(u, v)
        if action == ADD:
            if (u, v) in edges:
                raise ValidationError(f"ADD {u} {v}: edge already present")
            edges.add((u, v))
        elif action == DEL:
            if (u, v) not in edges:
                raise ValidationError(f"DEL {u} {v}: edge not present")
            edges.remove((u, v))
        else:
            raise ValidationError(f"unknown action {action!r}")
    return Graph(graph.n, np.array(sorted(edges), dtype=np.int64).reshape(-1, 2))


def write_diff(path, flips):
    with Path(path).open("w", encoding="ascii", newline="\n") as fh:
        for action, u, v in flips:
            fh.write(f"{action} {min(u, v)} {max(u, v)}\n")


def read_diff(path):
    path = Path(path)
    flips = []
    with path.open("r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if len(parts) != 3 or parts[0] not in (ADD, DEL):
                raise DatasetFormatError(path, lineno, "expected 'ADD u v' or 'DEL u v'")
            try:
                u, v = int(parts[1]), int(parts[2])
            except ValueError:
                raise DatasetFormatError(path, lineno, "non-integer vertex id") from None
            if not u < v:
                raise DatasetFormatError(path, lineno, "expected u < v")
            flips.append((parts[0], u, v))
    return flips


# --------------------------------------------------------------------------
# estimator


class HolisticAdversarialAttack(BaseEstimator):
    """Poisoning attack estimator.

    ``fit(X, y, graph, pseudo_labels)`` runs the flip loop.  ``y`` holds -1 on
    unlabeled vertices.  Results are left in ``perturbed_graph_``, ``flips_``
    and ``state_``.
    """

    def __init__(self, epsilon=0.05, K=16, delta=0.1, gamma=0.01, eta=0.05, epochs=100, lr=0.01,
                 hidden=16, warm_start=False, random_state=0):
        self.epsilon = epsilon
        self.K = K
        self.delta = delta
        self.gamma = gamma
        self.eta = eta
        self.epochs = epochs
        self.lr = lr
        self.hidden = hidden
        self.warm_start = warm_start
        self.random_state = random_state

    def _config(self):
        return AttackConfig(
            K=self.K, delta=self.delta, gamma=self.gamma, eta=self.eta, epochs=self.epochs,
            lr=self.lr, hidden=self.hidden, seed=self.random_state, warm_start=self.warm_start,
        )

    def fit(self, X, y, graph, pseudo_labels, features=None):
        if not isinstance(X, AttributeMatrix):
            X = AttributeMatrix(np.asarray(X, dtype=np.float64))
        y = check_labels(y, graph.n, allow_unlabeled=True)
        train_idx = labeled_index(y)
        pseudo_labels = check_labels(pseudo_labels, graph.n)
        start = time.perf_counter()
        self.state_, self.perturbed_graph_ = run_attack(
            graph, X, y, train_idx, pseudo_labels, self.epsilon, self._config(), features=features,
        )
        self.elapsed_ = time.perf_counter() - start
        self.flips_ = list(self.state_.flips)
        return self

    def transform(self, graph):
        """Replay the learned flips on ``graph``."""
        check_is_fitted(self, "flips_")
        return apply_flips(graph, self.flips_)
