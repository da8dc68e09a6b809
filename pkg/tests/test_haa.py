import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from rida.exceptions import BudgetExhaustedError, DatasetFormatError, ValidationError
from rida.graphio import Graph, normalize_adjacency
from rida.haa import (
    ADD,
    DEL,
    AttackConfig,
    HolisticAdversarialAttack,
    SurrogateParams,
    apply_flips,
    attack_gradient,
    attack_loss,
    budget_for,
    build_propagation_matrix,
    build_transition_powers,
    feasible_pairs,
    optimize_features,
    propagation_matrix,
    read_diff,
    run_attack,
    select_perturbation,
    surrogate_logits,
    train_surrogate,
    write_diff,
)

from conftest import check_attack_invariants, exact_budget, planted_problem, random_connected_graph


def _ahat(graph):
    return normalize_adjacency(graph, self_loops=False)


def aphi_oracle(adj_hat, K, delta, gamma):
    """Independent route: explicit matrix powers and an unrolled weighted sum.

    Unrolling the recursion gives weight ``lam_k * prod_{j>k} (1 - lam_j)`` on
    ``Â^k`` and ``prod_j (1 - lam_j)`` on the identity.
    """
    dense = adj_hat.toarray()
    n = dense.shape[0]
    lams = [delta * (1.0 - gamma) ** k for k in range(1, K)]
    out = np.prod([1.0 - lam for lam in lams]) * np.eye(n)
    for k, lam in enumerate(lams, start=1):
        tail = np.prod([1.0 - l2 for l2 in lams[k:]])
        out += lam * tail * np.linalg.matrix_power(dense, k)
    return out


def finite_difference(params, adj, x, targets, h=1e-5, symmetric=False):
    n = adj.shape[0]
    fd = np.zeros((n, n))
    for u in range(n):
        for v in range(n):
            if symmetric and v < u:
                continue
            e = np.zeros((n, n))
            e[u, v] = h
            if symmetric:
                e[v, u] = h
            fd[u, v] = (attack_loss(params, adj + e, x, targets)
                        - attack_loss(params, adj - e, x, targets)) / (2 * h)
            if symmetric:
                # moving both entries at once measures G[u,v] + G[v,u]
                fd[u, v] = fd[v, u] = fd[u, v] / (1.0 if u == v else 2.0)
    return fd


def gradient_instance(seed, n=12, d=5, c=3):
    rng = np.random.default_rng(seed)
    adj = random_connected_graph(rng, n, 8).adjacency().toarray()
    x = rng.random((n, d))
    params = SurrogateParams(W1=rng.normal(size=(4, c)), W2=rng.normal(size=(d, 4)))
    return params, adj, x, rng.integers(0, c, n)


def max_relative_error(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


# -- transition powers and propagation matrix ---------------------------------


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 50), st.integers(1, 20), st.integers(0, 2**31 - 1))
def test_powers_match_matrix_power(n, K, seed):
    g = random_connected_graph(np.random.default_rng(seed), n, n // 2)
    ahat = _ahat(g)
    powers = build_transition_powers(ahat, K)
    assert len(powers) == K
    dense = ahat.toarray()
    for k, t in enumerate(powers):
        np.testing.assert_allclose(t, np.linalg.matrix_power(dense, k + 1), rtol=0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(1, 20), st.floats(0, 1), st.floats(0, 1),
       st.integers(0, 2**31 - 1))
def test_aphi_matches_unrolled_oracle(n, K, delta, gamma, seed):
    g = random_connected_graph(np.random.default_rng(seed), n, n)
    ahat = _ahat(g)
    expected = aphi_oracle(ahat, K, delta, gamma)
    a = build_propagation_matrix(build_transition_powers(ahat, K), delta, gamma)
    b = propagation_matrix(ahat, K, delta, gamma)
    np.testing.assert_allclose(a, expected, rtol=0, atol=1e-12)
    np.testing.assert_allclose(b, expected, rtol=0, atol=1e-12)


def test_aphi_identity_cases(rng):
    ahat = _ahat(random_connected_graph(rng, 9, 4))
    assert np.array_equal(propagation_matrix(ahat, 1, 0.1, 0.01), np.eye(9))
    assert np.array_equal(propagation_matrix(ahat, 10, 0.0, 0.01), np.eye(9))


def test_triangle_second_power():
    g = Graph.from_edges(3, [(0, 1), (0, 2), (1, 2)])
    t1 = build_transition_powers(_ahat(g), 2)[1]
    np.testing.assert_allclose(np.diag(t1), 0.5)
    np.testing.assert_allclose(t1[~np.eye(3, dtype=bool)], 0.25)


def test_single_edge_second_power_is_identity():
    g = Graph.from_edges(2, [(0, 1)])
    np.testing.assert_allclose(build_transition_powers(_ahat(g), 2)[1], np.eye(2))


def test_rejects_bad_depth():
    g = Graph.from_edges(2, [(0, 1)])
    with pytest.raises(ValidationError):
        propagation_matrix(_ahat(g), 0, 0.1, 0.0)
    with pytest.raises(ValidationError):
        build_transition_powers(_ahat(g), 0)


# -- attack features ----------------------------------------------------------


def test_optimize_features_eta_zero_and_identity(rng):
    x = rng.random((6, 3))
    aphi = rng.random((6, 6))
    np.testing.assert_array_equal(optimize_features(aphi, x, 0.0), x)
    np.testing.assert_allclose(optimize_features(np.eye(6), x, 1.0), x, atol=1e-15)


def test_optimize_features_two_vertex_example():
    g = Graph.from_edges(2, [(0, 1)])
    aphi = propagation_matrix(_ahat(g), 2, 0.1, 0.0)
    xs = optimize_features(aphi, np.eye(2), 0.05)
    np.testing.assert_allclose(xs, [[0.995, 0.005], [0.005, 0.995]], atol=1e-15)


# -- surrogate ----------------------------------------------------------------


def test_surrogate_fits_separable_toy():
    # two cliques joined by one edge, one-hot community features
    edges = [(u, v) for u, v in itertools.combinations(range(5), 2)]
    edges += [(u + 5, v + 5) for u, v in edges] + [(4, 5)]
    g = Graph.from_edges(10, edges)
    y = np.array([0] * 5 + [1] * 5)
    x = np.eye(2)[y]
    train = np.array([0, 1, 8, 9])
    params = train_surrogate(g.adjacency(), x, y, train, epochs=200, lr=0.05)
    assert params.history[-1] < params.history[0]
    pred = np.asarray(surrogate_logits(params, g.adjacency(), x)).argmax(axis=1)
    assert np.array_equal(pred, y)


def test_zero_surrogate_loss_is_log_classes():
    rng = np.random.default_rng(0)
    adj = random_connected_graph(rng, 8, 4).adjacency()
    params = SurrogateParams(W1=np.zeros((4, 3)), W2=np.zeros((5, 4)))
    loss = attack_loss(params, adj, rng.random((8, 5)), rng.integers(0, 3, 8))
    assert loss == pytest.approx(-np.log(3), abs=1e-15)


def test_surrogate_training_is_deterministic(toy_problem):
    g, x, y = toy_problem
    train = np.arange(0, g.n, 4)
    a = train_surrogate(g.adjacency(), x.values, y, train, epochs=20, seed=3)
    b = train_surrogate(g.adjacency(), x.values, y, train, epochs=20, seed=3)
    np.testing.assert_array_equal(a.W1, b.W1)
    np.testing.assert_array_equal(a.W2, b.W2)


# -- attack gradient ----------------------------------------------------------


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_finite_differences(seed):
    params, adj, x, t = gradient_instance(seed)
    analytic = attack_gradient(params, adj, x, t, symmetrize=False)
    assert max_relative_error(analytic, finite_difference(params, adj, x, t)) <= 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_symmetrized_gradient_matches_symmetric_moves(seed):
    params, adj, x, t = gradient_instance(100 + seed)
    analytic = attack_gradient(params, adj, x, t)
    numeric = finite_difference(params, adj, x, t, symmetric=True)
    assert max_relative_error(analytic, numeric) <= 1e-4
    np.testing.assert_array_equal(analytic, analytic.T)


def test_gradient_vanishes_without_features():
    params, adj, x, t = gradient_instance(7)
    assert not attack_gradient(params, adj, np.zeros_like(x), t).any()


# -- flip selection -----------------------------------------------------------


def test_selects_unique_best_addition():
    g = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    grad = np.zeros((4, 4))
    grad[0, 3] = grad[3, 0] = -5.0
    assert select_perturbation(grad, g.adjacency().toarray()) == (0, 3, ADD)


def test_degree_one_endpoint_is_protected():
    g = Graph.from_edges(3, [(0, 1), (1, 2)])
    grad = np.zeros((3, 3))
    # strongly prefers deleting (0, 1), which would isolate vertex 0
    grad[0, 1] = grad[1, 0] = 10.0
    grad[0, 2] = grad[2, 0] = -1.0
    assert select_perturbation(grad, g.adjacency().toarray()) == (0, 2, ADD)


def test_exhausted_candidates_raise():
    g = Graph.from_edges(2, [(0, 1)])
    with pytest.raises(BudgetExhaustedError):
        select_perturbation(np.zeros((2, 2)), g.adjacency().toarray())


def _brute_force_choice(grad, adj, flipped):
    n = adj.shape[0]
    deg = adj.sum(axis=1)
    best, choice = -np.inf, None
    for u, v in itertools.combinations(range(n), 2):
        if (u, v) in flipped:
            continue
        if adj[u, v] and (deg[u] < 2 or deg[v] < 2):
            continue
        # grad is of the negated loss: adding helps when it is negative
        score = -grad[u, v] if not adj[u, v] else grad[u, v]
        if score > best:
            best, choice = score, (u, v, DEL if adj[u, v] else ADD)
    return choice


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31 - 1), st.booleans())
def test_selection_matches_brute_force(seed, coarse):
    rng = np.random.default_rng(seed)
    adj = random_connected_graph(rng, 5, int(rng.integers(0, 6))).adjacency().toarray()
    g = rng.normal(size=(5, 5))
    if coarse:
        g = np.round(g)  # plenty of ties
    grad = g + g.T
    pairs = list(itertools.combinations(range(5), 2))
    flipped = {pairs[i] for i in rng.choice(len(pairs), int(rng.integers(0, 4)), replace=False)}
    assert select_perturbation(grad, adj, flipped) == _brute_force_choice(grad, adj, flipped)


# -- full flip loop -----------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 100_000), st.integers(1, 9999))
def test_budget_is_exact_floor(m, ten_thousandths):
    # budgets are given as short decimals, e.g. 0.05
    eps = ten_thousandths / 10_000
    assert budget_for(m, eps) == exact_budget(m, eps)


def test_cora_sized_budget():
    assert budget_for(5069, 0.05) == 253


def _small_attack(problem, epsilon, **cfg):
    g, x, y = problem
    train = np.arange(0, g.n, 3)
    return run_attack(g, x, y, train, y, epsilon, AttackConfig(epochs=15, **cfg))


def test_attack_keeps_invariants_each_step(toy_problem):
    g, x, y = toy_problem
    seen = []

    def check(it, state):
        seen.append(it)
        check_attack_invariants(g, state, apply_flips(g, state.flips), 0.1, complete=False)

    state, perturbed = run_attack(g, x, y, np.arange(0, g.n, 3), y, 0.1,
                                  AttackConfig(epochs=15), callback=check)
    assert seen == list(range(exact_budget(g.num_edges, 0.1)))
    check_attack_invariants(g, state, perturbed, 0.1)
    assert len(state.surrogate_loss) == state.budget_used


def test_tiny_budget_is_identity(toy_problem):
    state, perturbed = _small_attack(toy_problem, 1e-4)
    assert state.budget_total == 0 and not state.flips
    assert np.array_equal(perturbed.edges, toy_problem[0].edges)


def test_attack_is_deterministic(toy_problem):
    a, _ = _small_attack(toy_problem, 0.05)
    b, _ = _small_attack(toy_problem, 0.05)
    assert a.flips == b.flips


def test_attack_rejects_bad_epsilon(toy_problem):
    for eps in (0.0, 1.0, -0.2):
        with pytest.raises(ValidationError):
            _small_attack(toy_problem, eps)


def test_attack_respects_supplied_features(toy_problem):
    g, x, y = toy_problem
    train = np.arange(0, g.n, 3)
    state, _ = run_attack(g, x, y, train, y, 0.05, AttackConfig(epochs=15),
                          features=np.zeros((g.n, 4)))
    # zero features give a zero gradient, so every score ties and the
    # lexicographically first feasible pair wins
    ok = feasible_pairs(g.adjacency().toarray(), set())
    first = tuple(int(i) for i in np.argwhere(ok)[0])
    assert state.flips[0][1:] == first


def test_full_budget_on_random_graphs():
    for seed in range(5):
        problem = planted_problem(np.random.default_rng(seed), n=20, d=6, c=2)
        state, perturbed = _small_attack(problem, 0.2)
        check_attack_invariants(problem[0], state, perturbed, 0.2)


# -- diff files ---------------------------------------------------------------


def test_diff_round_trip(tmp_path):
    flips = [(ADD, 0, 3), (DEL, 1, 2), (ADD, 2, 5)]
    write_diff(tmp_path / "d.txt", flips)
    assert (tmp_path / "d.txt").read_text() == "ADD 0 3\nDEL 1 2\nADD 2 5\n"
    assert read_diff(tmp_path / "d.txt") == flips


@pytest.mark.parametrize("text", ["FLIP 0 1\n", "ADD 1 0\n", "ADD 0\n", "DEL a 1\n", "ADD 2 2\n"])
def test_diff_rejects_malformed(tmp_path, text):
    (tmp_path / "d.txt").write_text(text)
    with pytest.raises(DatasetFormatError):
        read_diff(tmp_path / "d.txt")


def test_apply_flips_rejects_inconsistent():
    g = Graph.from_edges(3, [(0, 1)])
    with pytest.raises(ValidationError):
        apply_flips(g, [(ADD, 0, 1)])
    with pytest.raises(ValidationError):
        apply_flips(g, [(DEL, 1, 2)])
    assert apply_flips(g, [(DEL, 0, 1), (ADD, 0, 1)]).edge_set() == {(0, 1)}


# -- estimator ----------------------------------------------------------------


def test_estimator_fit_transform(toy_problem):
    g, x, y = toy_problem
    y_semi = np.full(g.n, -1)
    y_semi[::3] = y[::3]
    est = HolisticAdversarialAttack(epsilon=0.05, epochs=15, random_state=1)
    assert clone(est).get_params()["epsilon"] == 0.05
    est.fit(x, y_semi, g, pseudo_labels=y)
    assert len(est.flips_) == exact_budget(g.num_edges, 0.05)
    assert np.array_equal(est.transform(g).edges, est.perturbed_graph_.edges)
    assert est.elapsed_ >= 0
    est2 = HolisticAdversarialAttack(epsilon=0.05, epochs=15, random_state=1).fit(
        x.values, y_semi, g, pseudo_labels=y)
    assert est2.flips_ == est.flips_


def test_estimator_requires_fit(toy_problem):
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        HolisticAdversarialAttack().transform(toy_problem[0])
