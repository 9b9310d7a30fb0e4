import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smabayes.errors import (
    DegenerateInput,
    MissingEvidence,
    TooLarge,
    ValidationError,
    VariableMismatch,
)
from smabayes.fgn import (
    ConvergenceTrace,
    EmConfig,
    FactorGraph,
    FgnConfig,
    Gmm,
    Marginals,
    WeakSeparationWarning,
    brute_force_marginals,
    build_factor_graph,
    coupling_table,
    discretize_and_infer,
    evaluate_marginals,
    fit_gmm,
    fixed_point_residual,
    gene_evidence,
    gene_values,
    responsibilities,
    run_lbp,
)
from smabayes.ingest import EdgeList
from smabayes.preprocess import CoexpressionNetwork

E = math.e


def two_cluster(seed=0, n=100, sd=0.05):
    rng = np.random.default_rng(seed)
    return np.concatenate([rng.normal(-1, sd, n), rng.normal(1, sd, n)])


# -- GMM --------------------------------------------------------------------------


def test_gmm_recovers_means():
    g = fit_gmm(two_cluster(), 2)
    assert np.all(np.abs(g.means - [-1, 1]) < 0.03)
    assert g.converged


def test_gmm_constant_input():
    with pytest.raises(DegenerateInput):
        fit_gmm([0.3] * 10, 2)


def test_gmm_symmetric_weights():
    x = np.concatenate([-np.linspace(0.8, 1.2, 50), np.linspace(0.8, 1.2, 50)])
    g = fit_gmm(x, 2)
    assert g.weights == pytest.approx([0.5, 0.5], abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 4))
def test_gmm_em_monotone_and_sorted(seed, K):
    rng = np.random.default_rng(seed)
    x = rng.normal(rng.uniform(-3, 3, size=K)[rng.integers(K, size=60)], 0.5)
    g = fit_gmm(x, K, EmConfig(seed=seed))
    assert np.all(np.diff(g.log_likelihoods) >= -1e-10)
    assert np.all(np.diff(g.means) >= 0)
    assert abs(g.weights.sum() - 1) < 1e-12
    assert np.all(g.variances >= 1e-6)


def test_gmm_rejects_bad_parameters():
    with pytest.raises(ValidationError):
        Gmm([0.5, 0.5], [1.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValidationError):
        Gmm([0.6, 0.6], [0.0, 1.0], [1.0, 1.0])


def test_responsibilities_at_component_mean():
    g = Gmm([0.5, 0.5], [-1.0, 1.0], [0.01, 0.01])
    assert responsibilities(g, -1.0)[0] > 0.99


def test_responsibilities_midpoint():
    g = Gmm([0.5, 0.5], [-1.0, 1.0], [0.1, 0.1])
    assert responsibilities(g, 0.0) == pytest.approx([0.5, 0.5], abs=1e-15)


def test_responsibilities_far_tail():
    g = Gmm([0.5, 0.5], [-1.0, 1.0], [0.1, 0.1])
    assert responsibilities(g, 1e200)[1] == 1.0
    assert responsibilities(g, -1e200)[0] == 1.0


def test_responsibilities_match_direct_densities():
    g = Gmm([0.3, 0.7], [0.0, 2.0], [0.5, 1.5])
    x = 0.8
    dens = [w * math.exp(-((x - m) ** 2) / (2 * v)) / math.sqrt(2 * math.pi * v)
            for w, m, v in zip(g.weights, g.means, g.variances)]
    assert responsibilities(g, x) == pytest.approx(np.array(dens) / sum(dens), rel=1e-12)


# -- factor graph -----------------------------------------------------------------


def net_of(nodes, edges=()):
    return CoexpressionNetwork(tuple(nodes), EdgeList(tuple(edges)))


def test_single_node_graph():
    g = build_factor_graph(net_of(["a"]), {"a": [0.3, 0.7]})
    assert g.n_variables == 1 and g.pairwise == ()


def test_zero_weight_table_is_ones():
    assert np.array_equal(coupling_table(0.0, 2), np.ones((2, 2)))


def test_unit_weight_table():
    assert coupling_table(1.0, 2) == pytest.approx(np.array([[E, 1 / E], [1 / E, E]]), rel=1e-15)


def test_missing_evidence():
    with pytest.raises(MissingEvidence) as err:
        build_factor_graph(net_of(["a", "b"]), {"a": [0.5, 0.5]})
    assert "b" in str(err.value)


def test_graph_json_round_trip():
    g = build_factor_graph(net_of(["a", "b"], [("a", "b", 0.7)]), {"a": [0.2, 0.8], "b": [0.6, 0.4]})
    h = FactorGraph.from_json(g.to_json())
    assert h.names == g.names and np.array_equal(h.pairwise[0].table, g.pairwise[0].table)


def test_potentials_validated():
    with pytest.raises(ValidationError):
        FactorGraph(("a",), (2,), ([0.0, 0.0],))
    with pytest.raises(ValidationError):
        FactorGraph(("a",), (2,), ([-1.0, 2.0],))


# -- LBP and brute force ------------------------------------------------------------


def test_isolated_variable():
    g = FactorGraph(("a",), (2,), ([0.3, 0.7],))
    m, trace = run_lbp(g)
    assert m["a"] == pytest.approx([0.3, 0.7], abs=1e-15)
    assert trace.converged and len(trace) == 1
    assert brute_force_marginals(g)["a"] == pytest.approx([0.3, 0.7], abs=1e-15)


def test_two_variable_symmetry():
    g = FactorGraph(("a", "b"), (2, 2), ([1, 1], [1, 1]), ((0, 1, [[E, 1 / E], [1 / E, E]]),))
    bf = brute_force_marginals(g)
    assert bf["a"] == pytest.approx([0.5, 0.5]) and bf["b"] == pytest.approx([0.5, 0.5])


def test_three_chain_hand_computed():
    ua, ub, uc = [0.2, 0.8], [0.6, 0.4], [0.5, 0.5]
    t = [[2.0, 1.0], [1.0, 3.0]]
    g = FactorGraph(("a", "b", "c"), (2, 2, 2), (ua, ub, uc), ((0, 1, t), (1, 2, t)))
    # hand summation over the 8 configurations
    weight = {}
    for a, b, c in itertools.product((0, 1), repeat=3):
        weight[a, b, c] = ua[a] * ub[b] * uc[c] * t[a][b] * t[b][c]
    Z = sum(weight.values())
    pa1 = sum(w for (a, _, _), w in weight.items() if a == 1) / Z
    pb1 = sum(w for (_, b, _), w in weight.items() if b == 1) / Z
    bf = brute_force_marginals(g)
    assert bf["a"][1] == pytest.approx(pa1, abs=1e-14)
    assert bf["b"][1] == pytest.approx(pb1, abs=1e-14)
    # summing c out leaves [1.5, 2] per state of b; the four (a, b) terms are
    # 0.36, 0.16, 0.72, 1.92
    assert Z == pytest.approx(3.16, abs=1e-12)
    assert pa1 == pytest.approx(2.64 / 3.16, abs=1e-12)
    assert pb1 == pytest.approx(2.08 / 3.16, abs=1e-12)
    lbp, _ = run_lbp(g, damping=0.0, tol=1e-13)
    for v in g.names:
        assert lbp[v] == pytest.approx(bf[v], abs=1e-12)


def test_brute_force_too_large():
    g = FactorGraph(tuple(f"v{i}" for i in range(21)), (2,) * 21, ([1, 1],) * 21)
    with pytest.raises(TooLarge):
        brute_force_marginals(g)


def random_tree(rng, n, K):
    unary = [rng.uniform(0.05, 1.0, K) for _ in range(n)]
    pairwise = []
    for v in range(1, n):
        parent = int(rng.integers(v))
        pairwise.append((parent, v, rng.uniform(0.1, 3.0, (K, K))))
    return FactorGraph(tuple(f"x{i}" for i in range(n)), (K,) * n, tuple(unary), tuple(pairwise))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 9), st.sampled_from([2, 3]))
def test_lbp_exact_on_trees(seed, n, K):
    g = random_tree(np.random.default_rng(seed), n, K)
    lbp, trace = run_lbp(g, damping=0.3, max_iter=500, tol=1e-12)
    assert trace.converged
    bf = brute_force_marginals(g)
    for v in g.names:
        assert np.max(np.abs(lbp[v] - bf[v])) < 1e-9


def test_damping_does_not_move_fixed_point():
    rng = np.random.default_rng(5)
    g = random_tree(rng, 7, 2)
    loops = list(g.pairwise) + [(0, 6, rng.uniform(0.5, 2.0, (2, 2)))]
    g = FactorGraph(g.names, g.cards, g.unary, tuple(loops))
    a, _ = run_lbp(g, damping=0.0, max_iter=1000, tol=1e-13)
    b, _ = run_lbp(g, damping=0.7, max_iter=5000, tol=1e-13)
    assert np.max(np.abs(a.flat() - b.flat())) < 1e-9


def test_fixed_point_residual_zero_at_convergence():
    g = random_tree(np.random.default_rng(9), 5, 2)
    from smabayes.fgn import _lbp

    msgs, _, _, conv = _lbp(g, 0.0, 200, 1e-14)
    assert conv and fixed_point_residual(g, msgs) < 1e-12


def test_lbp_permutation_invariance():
    rng = np.random.default_rng(21)
    g = random_tree(rng, 6, 3)
    loops = list(g.pairwise) + [(1, 5, rng.uniform(0.5, 2.0, (3, 3)))]
    g = FactorGraph(g.names, g.cards, g.unary, tuple(loops))
    perm = rng.permutation(6)
    inv = np.argsort(perm)
    h = FactorGraph(
        tuple(g.names[p] for p in perm),
        g.cards,
        tuple(g.unary[p] for p in perm),
        tuple((int(inv[f.i]), int(inv[f.j]), f.table) for f in g.pairwise),
    )
    a, _ = run_lbp(g, tol=1e-13, max_iter=1000)
    b, _ = run_lbp(h, tol=1e-13, max_iter=1000)
    for v in g.names:
        assert np.max(np.abs(a[v] - b[v])) < 1e-10


def test_non_convergence_is_flagged():
    g = random_tree(np.random.default_rng(1), 6, 2)
    _, trace = run_lbp(g, damping=0.9, max_iter=2, tol=1e-15)
    assert not trace.converged and len(trace) == 2


def test_trace_iterations_increasing():
    with pytest.raises(ValidationError):
        ConvergenceTrace(((1, 0.1, 0.9), (1, 0.05, 0.99)))


# -- evaluation ---------------------------------------------------------------------


def test_evaluate_identity_and_reversal():
    m = Marginals(("a", "b", "c"), ([0.2, 0.8], [0.7, 0.3], [0.5, 0.5]))
    same = {n: p for n, p in m.as_dict().items()}
    assert evaluate_marginals(m, same).r == pytest.approx(1.0)
    rev = {n: p[::-1] for n, p in m.as_dict().items()}
    r, p, n = evaluate_marginals(m, rev)
    assert r == pytest.approx(-1.0) and n == 6


def test_evaluate_mismatch():
    m = Marginals(("a",), ([0.2, 0.8],))
    with pytest.raises(VariableMismatch):
        evaluate_marginals(m, {"b": [0.2, 0.8]})


def test_self_consistent_graph():
    rng = np.random.default_rng(2)
    names = [f"g{i}" for i in range(12)]
    ev = {n: (lambda q: [1 - q, q])(rng.uniform(0.05, 0.95)) for n in names}
    edges = [(names[i], names[i + 1], 0.05) for i in range(11)]
    g = build_factor_graph(net_of(names, edges), ev)
    m, _ = run_lbp(g, tol=1e-12)
    assert evaluate_marginals(m, ev).r >= 0.99


# -- discretise and infer -----------------------------------------------------------


def test_fixture_marginals_shape(fixture_matrix, fixture_network):
    res = discretize_and_infer(fixture_matrix, fixture_network, 2)
    assert len(res.marginals.flat()) == 19 * 2
    assert all(abs(p.sum() - 1) < 1e-9 for p in res.marginals.probs)
    assert res.trace.converged
    # regression pin: sweeps to convergence on the bundled fixture at tol 1e-6
    assert res.trace.iterations <= 50


def test_fixture_three_states(fixture_matrix, fixture_network):
    res = discretize_and_infer(fixture_matrix, fixture_network, 3)
    assert res.gmm.K == 3 and np.all(np.diff(res.gmm.means) > 0)
    assert len(res.marginals.flat()) == 19 * 3


def test_no_edges_marginals_equal_evidence(fixture_matrix):
    from smabayes.fixtures import NETWORK_GENES

    net = net_of(NETWORK_GENES)
    res = discretize_and_infer(fixture_matrix, net, 2)
    ev = gene_evidence(res.gmm, gene_values(fixture_matrix, NETWORK_GENES))
    for g in NETWORK_GENES:
        assert np.allclose(res.marginals[g], ev[g] / ev[g].sum(), rtol=0, atol=1e-15)


def test_many_states_warns(fixture_matrix, fixture_network):
    with pytest.warns(WeakSeparationWarning):
        res = discretize_and_infer(fixture_matrix, fixture_network, 7)
    assert len(res.marginals.flat()) == 19 * 7


def test_raw_reestimation(fixture_matrix, fixture_network):
    res = discretize_and_infer(fixture_matrix, fixture_network, 2, FgnConfig(reestimate="raw"))
    assert res.trace.converged
