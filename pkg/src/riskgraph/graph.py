"""Undirected region graph and the dense matrices derived from it."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

EDGE_KINDS = ("adjacent", "flight")


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph over dense node indices ``0..n-1``.

    ``edges`` maps each ``(u, v)`` pair with ``u < v`` to ``(kinds, weight)``.
    """

    node_ids: tuple
    adjacency: tuple[tuple[int, ...], ...]
    edges: dict = field(default_factory=dict)

    @property
    def node_count(self) -> int:
        return len(self.node_ids)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def neighbors(self, u: int) -> tuple[int, ...]:
        return self.adjacency[u]

    def degree(self, u: int | None = None):
        if u is None:
            return np.array([len(nb) for nb in self.adjacency], dtype=np.int64)
        return len(self.adjacency[u])

    def index_of(self, node_id: Hashable) -> int:
        return self._index[node_id]

    @property
    def _index(self) -> dict:
        # cached lazily; frozen dataclass so go through object.__setattr__
        idx = self.__dict__.get("_index_cache")
        if idx is None:
            idx = {nid: i for i, nid in enumerate(self.node_ids)}
            object.__setattr__(self, "_index_cache", idx)
        return idx

    def edge_list(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def flight_degree(self) -> np.ndarray:
        out = np.zeros(self.node_count, dtype=np.int64)
        for (u, v), (kinds, _) in self.edges.items():
            if "flight" in kinds:
                out[u] += 1
                out[v] += 1
        return out

    def flight_weight(self) -> np.ndarray:
        """Sum of flight-edge weights per node (transport frequency)."""
        out = np.zeros(self.node_count, dtype=np.float64)
        for (u, v), (kinds, w) in sorted(self.edges.items()):
            if "flight" in kinds:
                out[u] += w
                out[v] += w
        return out

    def permute(self, perm: Sequence[int]) -> "Graph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = list(perm)
        n = self.node_count
        if sorted(perm) != list(range(n)):
            raise GraphError("perm must be a permutation of 0..n-1")
        ids = [None] * n
        for i, p in enumerate(perm):
            ids[p] = self.node_ids[i]
        edges = {}
        for (u, v), val in self.edges.items():
            a, b = perm[u], perm[v]
            edges[(min(a, b), max(a, b))] = val
        return _from_index_edges(tuple(ids), edges)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return self.node_ids == other.node_ids and self.edges == other.edges

    def __hash__(self):
        return hash((self.node_ids, tuple(sorted(self.edges))))


def _from_index_edges(node_ids: tuple, edges: dict) -> Graph:
    nbrs: list[set] = [set() for _ in node_ids]
    for u, v in edges:
        nbrs[u].add(v)
        nbrs[v].add(u)
    adjacency = tuple(tuple(sorted(s)) for s in nbrs)
    return Graph(node_ids=node_ids, adjacency=adjacency, edges=dict(sorted(edges.items())))


def build_graph(node_ids: Iterable[Hashable], edges: Iterable[tuple]) -> Graph:
    """Build a graph from identifiers and ``(src, dst[, kind[, weight]])`` tuples.

    Repeated pairs are merged: weights add up and kinds are unioned.
    """
    node_ids = tuple(node_ids)
    index = {}
    for i, nid in enumerate(node_ids):
        if nid in index:
            raise GraphError(f"duplicate node id {nid!r}")
        index[nid] = i

    merged: dict[tuple[int, int], tuple[frozenset, float]] = {}
    for edge in edges:
        src, dst = edge[0], edge[1]
        kind = edge[2] if len(edge) > 2 and edge[2] is not None else "adjacent"
        weight = float(edge[3]) if len(edge) > 3 and edge[3] is not None else 1.0
        if src not in index or dst not in index:
            missing = src if src not in index else dst
            raise GraphError(f"edge {tuple(edge)!r} references unknown node id {missing!r}")
        if src == dst:
            raise GraphError(f"self-loop edge {tuple(edge)!r}")
        if kind not in EDGE_KINDS:
            raise GraphError(f"edge {tuple(edge)!r} has unknown kind {kind!r}")
        if not weight >= 0 or not np.isfinite(weight):
            raise GraphError(f"edge {tuple(edge)!r} has invalid weight {weight!r}")
        u, v = index[src], index[dst]
        key = (min(u, v), max(u, v))
        if key in merged:
            kinds, w = merged[key]
            merged[key] = (kinds | {kind}, w + weight)
        else:
            merged[key] = (frozenset({kind}), weight)
    return _from_index_edges(node_ids, merged)


def adjacency_matrix(g: Graph, weighted: bool = False) -> np.ndarray:
    """Binary (or weighted) symmetric adjacency with zero diagonal."""
    n = g.node_count
    A = np.zeros((n, n), dtype=np.float64)
    for (u, v), (_, w) in g.edges.items():
        val = w if weighted else 1.0
        A[u, v] = val
        A[v, u] = val
    return A


def renormalized_propagation(g: Graph, weighted: bool = False) -> np.ndarray:
    """Return ``D~^-1/2 (A + I) D~^-1/2``, the GCN propagation operator."""
    A = adjacency_matrix(g, weighted=weighted)
    A[np.diag_indices_from(A)] += 1.0
    d = A.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(d)
    return inv_sqrt[:, None] * A * inv_sqrt[None, :]


def normalized_laplacian(g: Graph) -> np.ndarray:
    """Return ``I - D^-1/2 A D^-1/2``; every node must have an edge."""
    A = adjacency_matrix(g)
    d = A.sum(axis=1)
    isolated = np.flatnonzero(d == 0)
    if isolated.size:
        raise GraphError(f"normalized Laplacian undefined: node {g.node_ids[isolated[0]]!r} is isolated")
    inv_sqrt = 1.0 / np.sqrt(d)
    return np.eye(g.node_count) - inv_sqrt[:, None] * A * inv_sqrt[None, :]
