"""Target-model evaluation, baselines, and the repeated-trial experiment."""

from dataclasses import asdict, dataclass, field
from pathlib import Path
import json
import logging
import time

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.impute import SimpleImputer
from sklearn.utils.validation import check_is_fitted

from . import _nn
from .dpgnn import DepthPlusGNN
from .exceptions import UndefinedMetricError, ValidationError
from .graphio import (
    AttributeMatrix,
    Graph,
    largest_connected_component,
    load_dataset,
    normalize_adjacency,
    row_normalize_attributes,
    split_labels,
    write_edges,
)
from .haa import (
    AttackConfig,
    apply_flips,
    budget_for,
    propagation_matrix,
    run_attack,
    surrogate_logits,
    train_surrogate,
    write_diff,
)
from .missingness import MissingnessSpec, apply_missingness, load_mask
from .validation import check_consistent_graph, check_fraction, check_labels, labeled_index

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# target model


@dataclass(frozen=True)
class TargetConfig:
    layers: int = 2
    hidden: int = 16
    lr: float = 0.005
    epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.layers != 2:
            raise ValidationError("only the 2-layer GCN target is implemented")


def gcn_loss_and_grad(params, adj_norm, features, train_idx, targets, *, weight_decay=0.0,
                      dropout_mask=None):
    """Loss and gradients of ``Ã relu(Ã X W1 + b1) W2 + b2`` on ``train_idx``.

    ``features`` is passed already multiplied by ``Ã`` (``Ã X``); it may be
    sparse.  ``weight_decay`` adds ``wd / 2 * ||W1||^2`` to the loss.
    ``dropout_mask`` scales the hidden activations.
    """
    pre = features @ params["W1"] + params["b1"]
    hid = np.maximum(pre, 0.0)
    if dropout_mask is not None:
        hid = hid * dropout_mask
    q = hid @ params["W2"]
    rows = adj_norm[train_idx]
    logits = rows @ q + params["b2"]
    loss, g_logits = _nn.cross_entropy(np.asarray(logits), targets)
    g_q = np.asarray(rows.T @ g_logits)
    g_hid = g_q @ params["W2"].T
    if dropout_mask is not None:
        g_hid = g_hid * dropout_mask
    g_pre = g_hid * (pre > 0)
    grads = {
        "W2": hid.T @ g_q,
        "b2": g_logits.sum(axis=0),
        "W1": np.asarray(features.T @ g_pre),
        "b1": g_pre.sum(axis=0),
    }
    if weight_decay:
        loss += 0.5 * weight_decay * float(np.sum(params["W1"] ** 2))
        grads["W1"] = grads["W1"] + weight_decay * params["W1"]
    return loss, grads


class GCNClassifier(ClassifierMixin, BaseEstimator):
    """Two-layer GCN with a rectifier between layers, trained by full-batch Adam.

    Transductive: ``fit(X, y, graph)`` with ``y = -1`` on unlabeled vertices;
    ``predict(vertices)`` reads from ``transduction_``.  Attributes are
    row-normalized over their observed entries.  Missing entries enter as 0.
    """

    def __init__(self, hidden=16, lr=0.005, epochs=200, weight_decay=0.0, dropout=0.0,
                 random_state=0):
        self.hidden = hidden
        self.lr = lr
        self.epochs = epochs
        self.weight_decay = weight_decay
        self.dropout = dropout
        self.random_state = random_state

    def fit(self, X, y, graph):
        if not isinstance(X, AttributeMatrix):
            X = AttributeMatrix(np.asarray(X, dtype=np.float64))
        check_consistent_graph(graph, X)
        y = check_labels(y, graph.n, allow_unlabeled=True)
        train_idx = labeled_index(y)
        if train_idx.size == 0:
            raise ValidationError("no labeled vertices")
        self.classes_ = np.arange(int(y.max()) + 1)
        adj_norm = normalize_adjacency(graph, self_loops=True)
        feats = sp.csr_matrix(row_normalize_attributes(X).values)
        agg = (adj_norm @ feats).tocsr()
        rng = np.random.default_rng(self.random_state)
        params = {
            "W1": _nn.glorot(rng, X.d, self.hidden),
            "b1": np.zeros(self.hidden),
            "W2": _nn.glorot(rng, self.hidden, self.classes_.size),
            "b2": np.zeros(self.classes_.size),
        }
        targets = y[train_idx]
        keep = 1.0 - self.dropout

        def step(p):
            mask = None
            if self.dropout:
                mask = (rng.random((graph.n, self.hidden)) < keep) / keep
            return gcn_loss_and_grad(p, adj_norm, agg, train_idx, targets,
                                     weight_decay=self.weight_decay, dropout_mask=mask)

        self.loss_curve_ = _nn.fit_adam(
            params, step, epochs=self.epochs, lr=self.lr, where="target GCN training",
        )
        self.params_ = params
        hid = np.maximum(agg @ params["W1"] + params["b1"], 0.0)
        self.logits_ = np.asarray(adj_norm @ (hid @ params["W2"])) + params["b2"]
        self.transduction_ = np.argmax(self.logits_, axis=1)
        self.n_features_in_ = X.d
        return self

    def predict(self, vertices=None):
        check_is_fitted(self, "transduction_")
        if vertices is None:
            return self.transduction_
        return self.transduction_[np.asarray(vertices, dtype=np.int64)]


def train_gcn_target(graph, attributes, split, cfg=TargetConfig()):
    """Fit a :class:`GCNClassifier` on ``split.train_idx``."""
    model = GCNClassifier(hidden=cfg.hidden, lr=cfg.lr, epochs=cfg.epochs, random_state=cfg.seed)
    return model.fit(attributes, split.semi_supervised_labels(), graph)


def accuracy(predictions, labels, test_idx):
    test_idx = np.asarray(test_idx, dtype=np.int64)
    if test_idx.size == 0:
        raise UndefinedMetricError("accuracy over an empty index set")
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    return float(np.mean(predictions[test_idx] == labels[test_idx]))


def trimmed_mean(values):
    """Mean after dropping one best and one worst value.

    With fewer than three values nothing can be dropped and the plain mean is
    returned.
    """
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise UndefinedMetricError("trimmed mean of no runs")
    if v.size < 3:
        return float(v.mean())
    return float(v[1:-1].mean())


# --------------------------------------------------------------------------
# baselines


def dice_attack(graph, labels_known, epsilon, seed):
    """Random DICE flips: delete same-class edges, add cross-class non-edges.

    ``labels_known`` holds -1 on vertices whose label the attacker does not
    know.  An edge counts as "internal" unless both endpoints are known and
    differ.  A non-edge counts as "external" only if both endpoints are known
    and differ.

    Returns
    -------
    perturbed : Graph
    info : dict
        ``flips`` in application order and the number of ``fallbacks`` to an
        unconstrained random flip.
    """
    epsilon = check_fraction(epsilon, "epsilon", low_open=True, high_open=True)
    y = check_labels(labels_known, graph.n, allow_unlabeled=True)
    rng = np.random.default_rng(seed)
    budget = budget_for(graph.num_edges, epsilon)
    edges = graph.edge_set()
    deg = graph.degree.copy()
    touched = set()
    flips = []
    fallbacks = 0

    known = np.flatnonzero(y >= 0)
    ku, kv = np.triu_indices(known.size, k=1)
    cross = y[known[ku]] != y[known[kv]]
    external = list(zip(known[ku][cross].tolist(), known[kv][cross].tolist()))

    def deletable(u, v):
        if (u, v) in touched or deg[u] < 2 or deg[v] < 2:
            return False
        return not (y[u] >= 0 and y[v] >= 0 and y[u] != y[v])

    def pick(cands):
        return cands[int(rng.integers(len(cands)))] if cands else None

    for _ in range(budget):
        if rng.random() < 0.5:
            choice = pick([e for e in sorted(edges) if deletable(*e)])
            action = "DEL"
        else:
            choice = pick([p for p in external if p not in edges and p not in touched])
            action = "ADD"
        if choice is None:
            fallbacks += 1
            choice, action = _random_flip(rng, graph.n, edges, deg, touched)
            if choice is None:
                log.warning("DICE: no feasible flip left")
                break
        u, v = choice
        if action == "DEL":
            edges.remove(choice)
            deg[u] -= 1
            deg[v] -= 1
        else:
            edges.add(choice)
            deg[u] += 1
            deg[v] += 1
        touched.add(choice)
        flips.append((action, u, v))
    perturbed = Graph(graph.n, np.array(sorted(edges), dtype=np.int64).reshape(-1, 2))
    return perturbed, {"flips": flips, "fallbacks": fallbacks, "budget": budget}


def _random_flip(rng, n, edges, deg, touched):
    pairs = [
        (u, v) for u in range(n) for v in range(u + 1, n)
        if (u, v) not in touched and ((u, v) not in edges or (deg[u] >= 2 and deg[v] >= 2))
    ]
    if not pairs:
        return None, None
    u, v = pairs[int(rng.integers(len(pairs)))]
    return (u, v), ("DEL" if (u, v) in edges else "ADD")


def mean_impute(attributes):
    """Fill each missing entry with its column's observed mean (0 if none observed)."""
    values = np.where(attributes.mask, attributes.values, np.nan)
    imputer = SimpleImputer(strategy="mean", keep_empty_features=True)
    filled = imputer.fit_transform(values)
    filled = np.where(attributes.mask, attributes.values, filled)
    return AttributeMatrix(filled)


# --------------------------------------------------------------------------
# experiment protocol


@dataclass
class ExperimentConfig:
    dataset: str
    alpha: float = 0.3
    beta: float = 0.7
    epsilon: float = 0.05
    K: int = 16
    delta: float = 0.1
    gamma: float = 0.01
    eta: float = 0.05
    omega: float = 0.9
    label_fraction: float = 0.1
    use_global_attention: bool = True
    use_local_attention: bool = True
    use_bfp: bool = True
    dpgnn_epochs: int = 200
    dpgnn_lr: float = 0.01
    surrogate_epochs: int = 100
    surrogate_lr: float = 0.01
    hidden: int = 16
    target_hidden: int = 16
    target_lr: float = 0.005
    target_epochs: int = 200
    runs: int = 10
    mask_seed: int = 0
    split_seed: int = 0
    attack_seed: int = 0
    target_seed: int = 0
    warm_start: bool = False
    reattack: bool = False
    baselines: tuple = ("dice", "mean")
    target_features: str = "incomplete"
    mask_path: str = None

    def __post_init__(self):
        if self.target_features not in ("incomplete", "complete"):
            raise ValidationError("target_features must be 'incomplete' or 'complete'")
        unknown = set(self.baselines) - {"dice", "mean"}
        if unknown:
            raise ValidationError(f"unknown baselines: {sorted(unknown)}")
        if self.runs < 1:
            raise ValidationError("runs must be >= 1")
        check_fraction(self.epsilon, "epsilon", low_open=True, high_open=True)
        MissingnessSpec(self.alpha, self.beta, self.mask_seed)

    def attack_config(self, seed=None):
        return AttackConfig(
            K=self.K, delta=self.delta, gamma=self.gamma, eta=self.eta,
            epochs=self.surrogate_epochs, lr=self.surrogate_lr, hidden=self.hidden,
            seed=self.attack_seed if seed is None else seed, warm_start=self.warm_start,
        )

    def surrogate_model(self):
        return DepthPlusGNN(
            K=self.K, delta=self.delta, gamma=self.gamma, omega=self.omega,
            use_global_attention=self.use_global_attention,
            use_local_attention=self.use_local_attention, use_bfp=self.use_bfp,
            hidden=self.hidden, epochs=self.dpgnn_epochs, lr=self.dpgnn_lr,
            random_state=self.attack_seed,
        )

    def to_dict(self):
        d = asdict(self)
        d["baselines"] = list(self.baselines)
        return d


@dataclass
class Prepared:
    """Everything the attacks and target runs share for one experiment."""

    graph: Graph
    complete: AttributeMatrix
    incomplete: AttributeMatrix
    split: object
    warnings: list = field(default_factory=list)


def prepare(cfg):
    graph, attrs, labels = load_dataset(cfg.dataset)
    graph, attrs, labels = largest_connected_component(graph, attrs, labels)
    split = split_labels(labels, cfg.label_fraction, cfg.split_seed)
    if cfg.mask_path:
        incomplete = load_mask(attrs, cfg.mask_path)
    else:
        incomplete = apply_missingness(attrs, MissingnessSpec(cfg.alpha, cfg.beta, cfg.mask_seed))
    return Prepared(graph, attrs, incomplete, split, list(split.warnings))


def fit_pseudo_labels(prep, cfg):
    model = cfg.surrogate_model().fit(prep.incomplete, prep.split.semi_supervised_labels(), prep.graph)
    return model


def rida_attack(prep, cfg, pseudo_labels, seed=None):
    split = prep.split
    return run_attack(
        prep.graph, prep.incomplete, split.labels, split.train_idx, pseudo_labels,
        cfg.epsilon, cfg.attack_config(seed),
    )


def mean_attack(prep, cfg, seed=None):
    """Gradient flip loop on mean-imputed attributes with a self-trained surrogate.

    The imputed attributes go straight to the surrogate: no positional blend.
    Pseudo-labels come from a surrogate trained on the clean graph.
    """
    split = prep.split
    acfg = cfg.attack_config(seed)
    xs = row_normalize_attributes(mean_impute(prep.incomplete)).values
    adj = prep.graph.adjacency()
    params = train_surrogate(
        adj, xs, split.labels, split.train_idx, n_classes=split.n_classes,
        epochs=acfg.epochs, lr=acfg.lr, hidden=acfg.hidden, seed=acfg.seed,
    )
    pseudo = np.argmax(np.asarray(surrogate_logits(params, adj, xs)), axis=1)
    return run_attack(
        prep.graph, prep.incomplete, split.labels, split.train_idx, pseudo,
        cfg.epsilon, AttackConfig(**{**asdict(acfg), "eta": 0.0}), features=xs,
    )


def _target_accuracy(graph, attrs, split, cfg, seed):
    tcfg = TargetConfig(hidden=cfg.target_hidden, lr=cfg.target_lr, epochs=cfg.target_epochs, seed=seed)
    model = train_gcn_target(graph, attrs, split, tcfg)
    return accuracy(model.predict(), split.labels, split.test_idx)


def run_experiment(cfg, out_dir=None):
    """Clean vs attacked target accuracy over ``cfg.runs`` seeded trainings.

    Every attacked evaluation reuses the clean run's split and target seed.
    When ``out_dir`` is given, ``results.json`` plus one diff file and one
    perturbed edge list per attack are written there.
    """
    timings = {}
    t0 = time.perf_counter()
    prep = prepare(cfg)
    timings["prepare"] = time.perf_counter() - t0
    split = prep.split

    t0 = time.perf_counter()
    surrogate = fit_pseudo_labels(prep, cfg)
    pseudo = surrogate.predict()
    timings["surrogate"] = time.perf_counter() - t0
    surrogate_acc = accuracy(pseudo, split.labels, split.test_idx)

    attackers = {"rida": lambda seed: rida_attack(prep, cfg, pseudo, seed)}
    if "dice" in cfg.baselines:
        def _dice(seed):
            g, info = dice_attack(prep.graph, split.semi_supervised_labels(), cfg.epsilon, seed)
            return info, g
        attackers["dice"] = _dice
    if "mean" in cfg.baselines:
        attackers["mean"] = lambda seed: mean_attack(prep, cfg, seed)

    attacked = {}
    meta = {}
    for name, fn in attackers.items():
        if cfg.reattack:
            continue
        t0 = time.perf_counter()
        state, graph = fn(cfg.attack_seed)
        timings[f"attack_{name}"] = time.perf_counter() - t0
        attacked[name] = graph
        meta[name] = _attack_meta(state)

    t0 = time.perf_counter()
    clean_runs, attack_runs = _paired_runs(prep, cfg, attackers, attacked, meta)
    timings["targets"] = time.perf_counter() - t0
    report = _build_report(prep, cfg, clean_runs, attack_runs, meta, timings)
    report["surrogate"] = {"test_accuracy": surrogate_acc}
    return _finish(report, attacked, meta, out_dir)


def evaluate_attacked(cfg, attacked, out_dir=None):
    """Score already-perturbed graphs against the clean graph.

    ``attacked`` maps an attack name to either a perturbed :class:`Graph` or a
    list of ``(action, u, v)`` flips to replay on the clean graph.
    """
    timings = {}
    t0 = time.perf_counter()
    prep = prepare(cfg)
    timings["prepare"] = time.perf_counter() - t0
    graphs, meta = {}, {}
    for name, item in attacked.items():
        if isinstance(item, Graph):
            if item.n != prep.graph.n:
                raise ValidationError(f"{name}: attacked graph has {item.n} vertices, "
                                      f"expected {prep.graph.n}")
            flips = _diff_graphs(prep.graph, item)
            graphs[name] = item
        else:
            flips = list(item)
            graphs[name] = apply_flips(prep.graph, flips)
        meta[name] = _attack_meta({"flips": flips, "budget": budget_for(prep.graph.num_edges, cfg.epsilon)})
    t0 = time.perf_counter()
    clean_runs, attack_runs = _paired_runs(prep, cfg, {}, graphs, meta)
    timings["targets"] = time.perf_counter() - t0
    report = _build_report(prep, cfg, clean_runs, attack_runs, meta, timings)
    return _finish(report, graphs, meta, out_dir)


def _diff_graphs(before, after):
    old, new = before.edge_set(), after.edge_set()
    flips = [("DEL", u, v) for u, v in sorted(old - new)]
    flips += [("ADD", u, v) for u, v in sorted(new - old)]
    return flips


def _paired_runs(prep, cfg, attackers, attacked, meta):
    split = prep.split
    target_attrs = prep.complete if cfg.target_features == "complete" else prep.incomplete
    names = list(attackers) or list(attacked)
    clean_runs = []
    attack_runs = {name: [] for name in names}
    for r in range(cfg.runs):
        seed = cfg.target_seed + r
        clean_runs.append(_target_accuracy(prep.graph, target_attrs, split, cfg, seed))
        for name in names:
            if cfg.reattack and name in attackers:
                state, graph = attackers[name](cfg.attack_seed + r)
                meta.setdefault(name, _attack_meta(state))
                attacked[name] = graph
            attack_runs[name].append(_target_accuracy(attacked[name], target_attrs, split, cfg, seed))
        log.info("run %d: clean=%.4f %s", r, clean_runs[-1],
                 " ".join(f"{k}={v[-1]:.4f}" for k, v in attack_runs.items()))
    return clean_runs, attack_runs


def _build_report(prep, cfg, clean_runs, attack_runs, meta, timings):
    split = prep.split
    return {
        "config": cfg.to_dict(),
        "dataset": {
            "n": prep.graph.n,
            "edges": prep.graph.num_edges,
            "d": prep.complete.d,
            "classes": split.n_classes,
            "train": int(split.train_idx.size),
            "test": int(split.test_idx.size),
            "missing_entries": prep.incomplete.num_missing(),
        },
        "clean": {"runs": clean_runs, "trimmed_mean": trimmed_mean(clean_runs)},
        "attacks": {
            name: {
                "runs": runs,
                "trimmed_mean": trimmed_mean(runs),
                **meta.get(name, {}),
            }
            for name, runs in attack_runs.items()
        },
        "timings": timings,
        "warnings": prep.warnings + [w for m in meta.values() for w in m.get("warnings", [])],
    }


def _finish(report, attacked, meta, out_dir):
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, graph in attacked.items():
            write_edges(out / f"{name}_edges.tsv", graph)
            write_diff(out / f"{name}_diff.txt", meta[name]["_flips"])
        write_report(report, out / "results.json")
    for m in report["attacks"].values():
        m.pop("_flips", None)
    return report


def _attack_meta(state):
    if isinstance(state, dict):
        flips = state["flips"]
        warnings = []
        if state.get("fallbacks"):
            warnings.append(f"DICE fell back to unconstrained flips {state['fallbacks']} times")
        budget = state["budget"]
    else:
        flips = state.flips
        warnings = list(state.warnings)
        budget = state.budget_total
    return {
        "budget": budget,
        "flips": len(flips),
        "added": sum(1 for a, _, _ in flips if a == "ADD"),
        "deleted": sum(1 for a, _, _ in flips if a == "DEL"),
        "warnings": warnings,
        "_flips": flips,
    }


def write_report(report, path):
    clean = {k: v for k, v in report.items()}
    clean["attacks"] = {
        name: {k: v for k, v in body.items() if not k.startswith("_")}
        for name, body in report["attacks"].items()
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(clean, fh, indent=2, sort_keys=True)
        fh.write("\n")


REPORT_SCHEMA = {
    "type": "object",
    "required": ["config", "clean", "attacks", "timings"],
    "properties": {
        "config": {"type": "object"},
        "clean": {"$ref": "#/definitions/runs"},
        "attacks": {
            "type": "object",
            "required": ["rida"],
            "additionalProperties": {"$ref": "#/definitions/runs"},
        },
        "timings": {"type": "object", "additionalProperties": {"type": "number"}},
    },
    "definitions": {
        "runs": {
            "type": "object",
            "required": ["runs", "trimmed_mean"],
            "properties": {
                "runs": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
                "trimmed_mean": {"type": "number", "minimum": 0, "maximum": 1},
            },
        }
    },
}


# --------------------------------------------------------------------------
# heatmap


def export_propagation_heatmap(aphi, path):
    """Write ``log10(Aphi + 1e-12)`` as an n x n CSV."""
    aphi = np.asarray(aphi, dtype=np.float64)
    if np.any(aphi < 0):
        raise ValidationError("propagation matrix has negative entries")
    np.savetxt(path, np.log10(aphi + 1e-12), delimiter=",", fmt="%.12g")


def heatmap_matrix(graph, K, delta, gamma):
    return propagation_matrix(normalize_adjacency(graph, self_loops=False), K, delta, gamma)
