import itertools
import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, strategies as st

from riskgraph.graph import GraphError, build_graph
from riskgraph.motifs import (BRUTEFORCE_MAX_NODES, MotifKind, count_nmd, count_nmd_bruteforce, motif_significance,
                              motif_totals, read_nmd_csv, rewire_null_model, significance_from_counts, write_nmd_csv)

from conftest import inverse, random_graph

SHAPES = {
    MotifKind.MT31: nx.complete_graph(3),
    MotifKind.MT32: nx.path_graph(3),
    MotifKind.MT41: nx.complete_graph(4),
    MotifKind.MT42: nx.complete_graph(4),
    MotifKind.MT43: nx.Graph([(0, 1), (1, 2), (0, 2), (2, 3)]),
}
SHAPES[MotifKind.MT42].remove_edge(0, 1)


def isomorphism_census(g):
    """Per-node induced motif counts by explicit subgraph isomorphism tests."""
    G = nx.Graph()
    G.add_nodes_from(range(g.node_count))
    G.add_edges_from(g.edge_list())
    out = np.zeros((g.node_count, 5), dtype=np.int64)
    for k in (3, 4):
        for sub in itertools.combinations(range(g.node_count), k):
            H = G.subgraph(sub)
            for m, shape in SHAPES.items():
                if m.order == k and nx.is_isomorphic(H, shape):
                    out[list(sub), m] += 1
    return out


def triangle():
    return build_graph("abc", [("a", "b"), ("b", "c"), ("a", "c")])


def test_triangle():
    assert count_nmd(triangle()).tolist() == [[1, 0, 0, 0, 0]] * 3


def test_star():
    g = build_graph("cxyz", [("c", "x"), ("c", "y"), ("c", "z")])
    nmd = count_nmd(g)
    assert nmd[g.index_of("c")].tolist() == [0, 3, 0, 0, 0]
    # a leaf sits in the two wedges that pass through it and one other leaf
    for leaf in "xyz":
        assert nmd[g.index_of(leaf)].tolist() == [0, 2, 0, 0, 0]
    assert motif_totals(nmd).tolist() == [0, 3, 0, 0, 0]


def test_k4():
    g = build_graph(range(4), itertools.combinations(range(4), 2))
    assert count_nmd(g).tolist() == [[3, 0, 1, 0, 0]] * 4
    assert count_nmd_bruteforce(g).tolist() == [[3, 0, 1, 0, 0]] * 4


def test_path_of_four_has_no_four_node_motif():
    g = build_graph("abcd", [("a", "b"), ("b", "c"), ("c", "d")])
    nmd = count_nmd(g)
    assert nmd[g.index_of("b")].tolist() == [0, 2, 0, 0, 0]
    assert nmd[g.index_of("a")].tolist() == [0, 1, 0, 0, 0]
    assert nmd[:, 2:].sum() == 0


def test_diamond_and_paw():
    diamond = build_graph(range(4), [(0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
    nmd = count_nmd(diamond)
    assert nmd[:, MotifKind.MT42].tolist() == [1, 1, 1, 1]
    assert nmd[:, MotifKind.MT31].tolist() == [1, 1, 2, 2]
    assert nmd[:, MotifKind.MT32].tolist() == [2, 2, 1, 1]
    paw = build_graph(range(4), [(0, 1), (1, 2), (0, 2), (2, 3)])
    nmd = count_nmd(paw)
    assert nmd[:, MotifKind.MT43].tolist() == [1, 1, 1, 1]
    assert nmd[3, MotifKind.MT32] == 2


def test_empty_graph():
    assert not count_nmd_bruteforce(build_graph(range(5), [])).any()
    assert not count_nmd(build_graph(range(5), [])).any()


def test_bruteforce_guard():
    with pytest.raises(GraphError, match=str(BRUTEFORCE_MAX_NODES)):
        count_nmd_bruteforce(build_graph(range(BRUTEFORCE_MAX_NODES + 1), []))


@pytest.mark.parametrize("seed", range(12))
def test_bruteforce_matches_isomorphism_oracle(seed):
    g = random_graph(9, [0.2, 0.4, 0.6][seed % 3], seed)
    expected = isomorphism_census(g)
    assert np.array_equal(count_nmd_bruteforce(g), expected)
    assert np.array_equal(count_nmd(g), expected)


@given(st.integers(2, 16), st.floats(0.0, 1.0), st.integers(0, 10_000))
def test_counting_matches_bruteforce(n, p, seed):
    g = random_graph(n, p, seed)
    assert np.array_equal(count_nmd(g), count_nmd_bruteforce(g))


@given(st.integers(3, 14), st.integers(0, 10_000))
def test_nmd_permutation_equivariant(n, seed):
    g = random_graph(n, 0.4, seed)
    perm = np.random.default_rng(seed).permutation(n)
    assert np.array_equal(count_nmd(g.permute(perm))[perm], count_nmd(g))
    assert np.array_equal(count_nmd(g.permute(perm)), count_nmd(g)[inverse(perm)])


@given(st.integers(3, 14), st.integers(0, 10_000))
def test_global_counts_consistent(n, seed):
    nmd = count_nmd(random_graph(n, 0.5, seed))
    orders = np.array([m.order for m in MotifKind])
    assert np.all(nmd.sum(axis=0) % orders == 0)
    totals = motif_totals(nmd)
    assert np.all(nmd <= totals * orders)


def test_wedge_total_matches_networkx_triangles():
    g = random_graph(20, 0.3, 5)
    G = nx.Graph(g.edge_list())
    G.add_nodes_from(range(20))
    tri = nx.triangles(G)
    nmd = count_nmd(g)
    assert nmd[:, MotifKind.MT31].tolist() == [tri[i] for i in range(20)]


def test_rewire_preserves_degrees_and_is_deterministic():
    g = random_graph(30, 0.2, 1)
    a = rewire_null_model(g, swaps=200, seed=3)
    b = rewire_null_model(g, swaps=200, seed=3)
    assert a == b
    assert np.array_equal(a.degree(), g.degree())
    assert a.edge_count == g.edge_count
    assert a != g


def test_rewire_triangle_unchanged():
    for seed in range(5):
        assert rewire_null_model(triangle(), swaps=10, seed=seed) == triangle()


def test_rewire_four_cycle_keeps_degree_two():
    cycle = build_graph("abcd", [("a", "b"), ("b", "c"), ("c", "d"), ("d", "a")])
    for seed in range(5):
        assert rewire_null_model(cycle, swaps=5, seed=seed).degree().tolist() == [2, 2, 2, 2]


def test_rewire_needs_two_edges():
    with pytest.raises(GraphError):
        rewire_null_model(build_graph("ab", [("a", "b")]), swaps=1, seed=0)


def test_significance_examples():
    r = significance_from_counts(MotifKind.MT31, 10, [2, 4, 6])
    assert r.f_rand_mean == 4 and r.f_rand_std == 2
    assert r.z_score == 3.0
    assert r.passes_P and r.passes_U and r.passes_D

    r = significance_from_counts(MotifKind.MT31, 4, [2, 4, 6], thresholds={"U": 5})
    assert r.z_score == 0.0
    assert not r.passes_U and not r.passes_D
    for d in (0, 0.1, 3):
        assert not significance_from_counts(MotifKind.MT31, 4, [2, 4, 6], thresholds={"D": d}).passes_D


def test_zero_variance_sentinel():
    r = significance_from_counts(MotifKind.MT32, 5, [3, 3, 3])
    assert r.zero_variance and math.isinf(r.z_score) and r.z_score > 0
    r = significance_from_counts(MotifKind.MT32, 3, [3, 3, 3])
    assert r.zero_variance and r.z_score == 0.0


def test_significance_on_clustered_graph():
    # disjoint triangles cannot be matched by degree-preserving random graphs
    edges = [(3 * k + a, 3 * k + b) for k in range(8) for a, b in ((0, 1), (1, 2), (0, 2))]
    g = build_graph(range(24), edges)
    r = motif_significance(g, MotifKind.MT31, ensemble=20, seed=0)
    assert r.f_ori == 8
    assert r.f_rand_mean < 8
    assert r.passes_U and r.passes_D
    again = motif_significance(g, MotifKind.MT31, ensemble=20, seed=0)
    assert again == r


def test_nmd_csv_round_trip(tmp_path):
    base = random_graph(10, 0.5, 2)
    g = build_graph([f"n{i}" for i in range(10)], [(f"n{a}", f"n{b}") for a, b in base.edge_list()])
    nmd = count_nmd(g)
    write_nmd_csv(tmp_path / "nmd.csv", g, nmd)
    assert np.array_equal(read_nmd_csv(tmp_path / "nmd.csv", g), nmd)
