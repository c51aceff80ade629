from __future__ import annotations

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import EX_A, EX_B, EX_C, EX_D, EX_S1, EX_S2, cfgs, random_dag_cfg
from edgehorizon.centrality import (
    BetaVector,
    KatzParams,
    Kind,
    SingularSystemError,
    alt_centrality,
    compute_beta,
    katz_dense_oracle,
    katz_power,
    truncated_expansion,
)
from edgehorizon.graph import Digraph
from edgehorizon.scheduler import MutationStats

# Worked example: one column per iteration t = 0..3.
ITERATES = {
    EX_A: [0.3, 0.3, 0.3, 0.3],
    EX_B: [0.7, 1.7, 1.7, 1.7],
    EX_C: [1, 1, 1, 1],
    EX_D: [1, 1, 1, 1],
    EX_S1: [1, 1.15, 1.15, 1.15],
    EX_S2: [1, 1.5, 2, 2],
}


@pytest.fixture
def example_beta(example_ehg, example_stats):
    return compute_beta(example_ehg.horizon_nodes, example_stats)


def test_worked_example_iterates(example_ehg, example_beta):
    c = katz_power(example_ehg.graph, KatzParams(alpha=0.5), example_beta, record=True)
    assert c.converged
    assert c.iterations_used <= 3
    for t in range(4):
        got = c.iterate(t)
        for node, column in ITERATES.items():
            assert got[node] == pytest.approx(column[t], abs=1e-12)
    assert c.scores == pytest.approx({n: col[-1] for n, col in ITERATES.items()}, abs=1e-9)


def test_iterates_require_recording(example_ehg):
    with pytest.raises(ValueError):
        katz_power(example_ehg.graph).iterate(0)


def test_beta_fixture(example_beta):
    assert example_beta[EX_A] == 0.3
    assert example_beta[EX_B] == 0.7
    assert example_beta[EX_C] == 1.0


def test_beta_without_mutations_is_all_ones():
    beta = compute_beta({1, 2}, MutationStats(0, {1: 5}))
    assert len(beta) == 0 and beta[1] == 1.0 and beta[2] == 1.0


def test_beta_clamps_when_parents_are_reached_more_than_total():
    beta = compute_beta({1}, MutationStats(10, {1: 25}))
    assert beta[1] == 0.0


@pytest.mark.parametrize("bad", [-0.1, 1.5, float("nan")])
def test_beta_vector_rejects_out_of_range(bad):
    with pytest.raises(ValueError):
        BetaVector({1: bad})


@pytest.mark.parametrize("kwargs", [{"alpha": 1.0}, {"alpha": -0.1}, {"tolerance": 0}, {"max_iterations": 0}])
def test_katz_params_validation(kwargs):
    with pytest.raises(ValueError):
        KatzParams(**kwargs)


def test_alpha_zero_gives_beta():
    g = Digraph.from_edges(range(3), [(0, 1), (1, 2)])
    c = katz_power(g, KatzParams(alpha=0.0), np.array([0.2, 0.5, 0.9]))
    assert c.values.tolist() == [0.2, 0.5, 0.9]


def test_no_edges_gives_beta():
    g = Digraph.from_edges(range(4), [])
    c = katz_power(g)
    assert c.values.tolist() == [1.0] * 4
    assert c.iterations_used == 1


def test_eight_node_dag_matches_dense_solve():
    rng = np.random.default_rng(8)
    g = random_dag_cfg(rng, 8, 0.4).graph
    beta = rng.random(8)
    power = katz_power(g, KatzParams(alpha=0.5), beta)
    dense = katz_dense_oracle(g, 0.5, beta)
    assert np.max(np.abs(power.values - dense.values)) < 1e-8


@settings(max_examples=150)
@given(cfgs(max_nodes=15, acyclic=True), st.floats(0.0, 0.95), st.integers(0, 2**32 - 1))
def test_power_dense_and_truncated_agree_on_dags(cfg, alpha, seed):
    g = cfg.graph
    beta = np.random.default_rng(seed).random(g.n)
    power = katz_power(g, KatzParams(alpha=alpha), beta)
    dense = katz_dense_oracle(g, alpha, beta)
    k = g.longest_path_length() + 1
    series = truncated_expansion(g, alpha, beta, k)
    assert power.converged and series.converged
    assert power.iterations_used <= k + 1
    assert np.allclose(power.values, dense.values, rtol=0, atol=1e-8 * max(1.0, np.abs(dense.values).max()))
    assert np.allclose(series.values, power.values, rtol=1e-12, atol=1e-12)


def test_truncated_expansion_short_of_longest_path_is_not_converged():
    g = Digraph.from_edges(range(4), [(0, 1), (1, 2), (2, 3)])
    assert not truncated_expansion(g, 0.5, None, 2).converged
    assert truncated_expansion(g, 0.5, None, 4).converged
    assert truncated_expansion(g, 0.5, None, 0).values.tolist() == [1.0] * 4
    with pytest.raises(ValueError):
        truncated_expansion(g, 0.5, None, -1)


def test_divergence_is_reported_not_raised():
    # Complete digraph on three nodes: lambda_max = 2, so alpha = 0.6 diverges.
    g = Digraph.from_edges(range(3), [(i, j) for i in range(3) for j in range(3) if i != j])
    c = katz_power(g, KatzParams(alpha=0.6, max_iterations=5000))
    assert not c.converged
    with pytest.raises(SingularSystemError):
        katz_dense_oracle(g, 0.5)


def test_cycle_below_critical_alpha_converges_to_dense():
    g = Digraph.from_edges(range(3), [(0, 1), (1, 2), (2, 0)])
    c = katz_power(g, KatzParams(alpha=0.5))
    assert c.converged
    assert np.allclose(c.values, katz_dense_oracle(g, 0.5).values, atol=1e-8)


def test_dense_oracle_size_limit():
    g = Digraph.from_edges(range(2001), [])
    with pytest.raises(ValueError):
        katz_dense_oracle(g, 0.5)


@given(cfgs(max_nodes=10, acyclic=True), st.integers(0, 2**32 - 1))
def test_raising_beta_never_lowers_a_score(cfg, seed):
    rng = np.random.default_rng(seed)
    low = rng.random(cfg.graph.n) * 0.5
    high = low + rng.random(cfg.graph.n) * 0.5
    a = katz_power(cfg.graph, KatzParams(), low).values
    b = katz_power(cfg.graph, KatzParams(), high).values
    assert np.all(b >= a - 1e-12)


def test_ranked_breaks_ties_by_node_id():
    g = Digraph.from_edges([4, 2, 9], [(9, 4)])
    assert [n for n, _ in katz_power(g).ranked()] == [9, 2, 4]


# -- alternate centralities ------------------------------------------------------------


def test_degree_is_out_degree():
    g = Digraph.from_edges(range(4), [(0, 1), (0, 2), (2, 3)])
    assert alt_centrality(g, Kind.DEGREE).values.tolist() == [2.0, 0.0, 1.0, 0.0]


@settings(max_examples=60)
@given(cfgs(max_nodes=12))
def test_pagerank_matches_networkx_on_reversed_graph(cfg):
    g = cfg.graph
    h = nx.DiGraph()
    h.add_nodes_from(g.ids.tolist())
    h.add_edges_from((v, u) for u, v in g.edges())
    want = nx.pagerank(h, alpha=0.85, tol=1e-13, max_iter=10000)
    got = alt_centrality(g, "pagerank", KatzParams(tolerance=1e-13, max_iterations=10000))
    assert got.converged
    assert got.scores == pytest.approx(want, abs=1e-9)
    assert got.values.sum() == pytest.approx(1.0)


def test_eigenvector_argmax_matches_near_unit_alpha_katz():
    rng = np.random.default_rng(10)
    for _ in range(20):
        g = random_dag_cfg(rng, 10, 0.35).graph
        eig = alt_centrality(g, Kind.EIGENVECTOR)
        katz = katz_power(g, KatzParams(alpha=0.999999))
        assert eig.converged
        top = np.argmax(katz.values)
        assert eig.values[top] == pytest.approx(eig.values.max(), abs=1e-6)
        assert np.allclose(eig.values, katz.values / np.linalg.norm(katz.values), atol=1e-6)


def test_eigenvector_on_strongly_connected_graph_is_principal():
    g = Digraph.from_edges(range(4), [(0, 1), (1, 2), (2, 0), (2, 3), (3, 0), (0, 2)])
    got = alt_centrality(g, Kind.EIGENVECTOR, KatzParams(tolerance=1e-12, max_iterations=100000)).values
    w, v = np.linalg.eig(g.adjacency().toarray())
    principal = np.abs(np.real(v[:, np.argmax(np.real(w))]))
    assert np.allclose(got, principal / np.linalg.norm(principal), atol=1e-6)


def test_alt_centrality_rejects_empty_graph():
    with pytest.raises(ValueError):
        alt_centrality(Digraph.from_edges([], []), Kind.PAGERANK)
