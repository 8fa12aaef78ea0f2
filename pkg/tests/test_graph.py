import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from riskgraph.graph import (Graph, GraphError, adjacency_matrix, build_graph, normalized_laplacian,
                             renormalized_propagation)

from conftest import inverse, random_graph


def test_build_graph_basic():
    g = build_graph(["a", "b", "c"], [("a", "b", "adjacent", 1)])
    assert g.node_count == 3
    assert g.edge_count == 1
    assert g.degree(g.index_of("c")) == 0


def test_duplicate_edges_merge_kinds_and_weights():
    g = build_graph(["a", "b"], [("a", "b", "flight", 1), ("b", "a", "adjacent", 1)])
    assert g.edge_count == 1
    kinds, weight = g.edges[(0, 1)]
    assert kinds == {"flight", "adjacent"}
    assert weight == 2


def test_self_loop_rejected():
    with pytest.raises(GraphError, match="self-loop"):
        build_graph(["a"], [("a", "a", "adjacent", 1)])


def test_unknown_node_names_edge():
    with pytest.raises(GraphError, match="zz"):
        build_graph(["a", "b"], [("a", "zz")])


def test_adjacency_examples():
    assert np.array_equal(adjacency_matrix(build_graph([0, 1], [(0, 1)])), [[0, 1], [1, 0]])
    assert np.array_equal(adjacency_matrix(build_graph([0, 1, 2], [])), np.zeros((3, 3)))
    tri = build_graph([0, 1, 2], [(0, 1), (1, 2), (0, 2)])
    assert np.array_equal(adjacency_matrix(tri), np.ones((3, 3)) - np.eye(3))


def test_propagation_examples():
    assert np.array_equal(renormalized_propagation(build_graph(["x"], [])), [[1.0]])
    assert np.allclose(renormalized_propagation(build_graph([0, 1], [(0, 1)])), 0.5, atol=1e-15)
    tri = build_graph([0, 1, 2], [(0, 1), (1, 2), (0, 2)])
    assert np.allclose(renormalized_propagation(tri), 1 / 3, atol=1e-15)


def test_laplacian_examples():
    assert np.allclose(normalized_laplacian(build_graph([0, 1], [(0, 1)])), [[1, -1], [-1, 1]])
    tri = build_graph([0, 1, 2], [(0, 1), (1, 2), (0, 2)])
    L = normalized_laplacian(tri)
    assert np.allclose(np.diag(L), 1)
    assert np.allclose(L[~np.eye(3, dtype=bool)], -0.5)


def test_laplacian_rejects_isolated_node_by_name():
    with pytest.raises(GraphError, match="lonely"):
        normalized_laplacian(build_graph(["a", "b", "lonely"], [("a", "b")]))


@pytest.mark.parametrize("seed", range(10))
def test_laplacian_matches_networkx(seed):
    g = random_graph(15, 0.4, seed)
    if (g.degree() == 0).any():
        pytest.skip("isolated node")
    G = nx.Graph()
    G.add_nodes_from(range(15))
    G.add_edges_from(g.edge_list())
    ref = nx.normalized_laplacian_matrix(G, nodelist=range(15)).toarray()
    assert np.allclose(normalized_laplacian(g), ref, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
def test_propagation_matches_explicit_formula(seed):
    g = random_graph(12, 0.3, seed)
    A = adjacency_matrix(g) + np.eye(12)
    Dm = np.diag(1 / np.sqrt(A.sum(axis=1)))
    assert np.allclose(renormalized_propagation(g), Dm @ A @ Dm, atol=1e-14)


def test_weighted_propagation_uses_weights():
    g = build_graph([0, 1, 2], [(0, 1, "flight", 3.0), (1, 2, "adjacent", 1.0)])
    A = adjacency_matrix(g, weighted=True)
    assert A[0, 1] == 3.0 and A[1, 2] == 1.0
    P = renormalized_propagation(g, weighted=True)
    assert np.allclose(P, P.T)


def test_flight_degree_counts_flight_edges_only():
    g = build_graph("abc", [("a", "b", "flight", 2.0), ("b", "c", "adjacent", 1.0)])
    assert list(g.flight_degree()) == [1, 1, 0]
    assert list(g.flight_weight()) == [2.0, 2.0, 0.0]


graphs = st.integers(2, 14).flatmap(
    lambda n: st.tuples(st.just(n), st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1))
                                            .filter(lambda e: e[0] != e[1]), max_size=40)))


@given(graphs)
def test_graph_invariants(data):
    n, edges = data
    g = build_graph(range(n), edges)
    for u in range(n):
        nb = g.neighbors(u)
        assert list(nb) == sorted(set(nb))
        assert u not in nb
        for v in nb:
            assert u in g.neighbors(v)
    A = adjacency_matrix(g)
    assert np.array_equal(A, A.T)
    assert np.trace(A) == 0


@given(graphs, st.randoms(use_true_random=False))
def test_propagation_is_symmetric_and_permutes(data, rnd):
    n, edges = data
    g = build_graph(range(n), edges)
    P = renormalized_propagation(g)
    assert np.allclose(P, P.T, atol=1e-15)
    # eigenvalues of the renormalized operator lie in (-1, 1]
    ev = np.linalg.eigvalsh(P)
    assert ev.max() <= 1 + 1e-12 and ev.min() > -1
    perm = list(range(n))
    rnd.shuffle(perm)
    Pp = renormalized_propagation(g.permute(perm))
    inv = inverse(perm)
    assert np.allclose(Pp[np.ix_(perm, perm)], P, atol=1e-15)
    assert np.allclose(P[np.ix_(inv, inv)], Pp, atol=1e-15)


def test_graph_equality_and_hash():
    a = build_graph("ab", [("a", "b")])
    b = build_graph("ab", [("b", "a")])
    assert a == b and hash(a) == hash(b)
    assert isinstance(a, Graph)
