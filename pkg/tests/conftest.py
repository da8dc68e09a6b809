from fractions import Fraction
from pathlib import Path
import math

import numpy as np
import pytest

from rida.graphio import AttributeMatrix, Graph
from rida.haa import apply_flips

ROOT = Path(__file__).resolve().parents[1]
DATA = ROOT / "data"


def random_connected_graph(rng, n, extra):
    """Random spanning tree on ``n`` vertices plus ``extra`` random edges."""
    pairs = set()
    for v in range(1, n):
        u = int(rng.integers(0, v))
        pairs.add((u, v))
    target = min(len(pairs) + extra, n * (n - 1) // 2)
    while len(pairs) < target:
        u, v = sorted(int(t) for t in rng.choice(n, 2, replace=False))
        pairs.add((u, v))
    return Graph.from_edges(n, sorted(pairs))


def planted_problem(rng, n=40, d=12, c=3, extra=None):
    """Connected graph with class-correlated binary attributes."""
    graph = random_connected_graph(rng, n, extra if extra is not None else n)
    labels = rng.integers(0, c, n)
    x = (rng.random((n, d)) < 0.2).astype(float)
    x[np.arange(n), labels % d] = 1.0
    return graph, AttributeMatrix(x), labels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy_problem():
    return planted_problem(np.random.default_rng(7))


@pytest.fixture
def toy_dataset(tmp_path, toy_problem):
    from rida.graphio import save_dataset

    graph, attrs, labels = toy_problem
    directory = tmp_path / "toy"
    save_dataset(directory, graph, attrs, labels)
    return directory


def requires_dataset(name):
    return pytest.mark.skipif(
        not (DATA / name / "edges.tsv").exists(), reason=f"bundled dataset {name} not present"
    )


def exact_budget(num_edges, epsilon):
    """floor(|E| * epsilon), with epsilon read as the decimal it prints as."""
    return math.floor(num_edges * Fraction(repr(float(epsilon))))


def check_attack_invariants(graph, state, perturbed, epsilon, *, complete=True):
    """Assert the bookkeeping contract of a finished (or partial) attack."""
    a = graph.adjacency().toarray()
    p = state.perturbation.astype(float)
    assert state.budget_total == exact_budget(graph.num_edges, epsilon)
    if complete:
        assert state.budget_used == state.budget_total
    assert state.budget_used <= state.budget_total
    assert np.array_equal(p, p.T)
    assert not np.diag(p).any()
    assert np.all(p[a == 0] >= 0) and np.all(p[a == 1] <= 0)
    pairs = [(u, v) for _, u, v in state.flips]
    assert len(pairs) == len(set(pairs))
    assert all(u < v for u, v in pairs)
    assert np.count_nonzero(np.triu(p)) == state.budget_used
    attacked = a + p
    assert set(np.unique(attacked).tolist()) <= {0.0, 1.0}
    created = (attacked.sum(axis=1) == 0) & (a.sum(axis=1) > 0)
    assert not created.any()
    assert np.array_equal(perturbed.adjacency().toarray(), attacked)
    assert np.array_equal(apply_flips(graph, state.flips).edges, perturbed.edges)
