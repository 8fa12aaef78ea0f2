"""Per-node counts of the five transmission motifs and their significance.

Shapes (all counted as induced subgraphs):

* ``MT31`` triangle
* ``MT32`` open wedge (induced path on three nodes)
* ``MT41`` 4-clique
* ``MT42`` diamond, a 4-clique with one edge removed
* ``MT43`` paw, a triangle with a pendant fourth node
"""

from __future__ import annotations

import csv
import enum
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .graph import Graph, GraphError, _from_index_edges


class MotifKind(enum.IntEnum):
    MT31 = 0
    MT32 = 1
    MT41 = 2
    MT42 = 3
    MT43 = 4

    @property
    def order(self) -> int:
        return 3 if self in (MotifKind.MT31, MotifKind.MT32) else 4


MOTIFS = tuple(MotifKind)
BRUTEFORCE_MAX_NODES = 64


def count_nmd(g: Graph) -> np.ndarray:
    """Node motif degree table, shape ``(n, 5)``, columns in ``MotifKind`` order.

    Edge-driven neighborhood search: for each edge ``(a, b)`` the common
    neighbourhood ``N_a & N_b`` yields triangles, which extend to 4-cliques,
    diamonds and paws; nodes adjacent to only one endpoint yield wedges.
    Ordering constraints make every unordered node set count once.
    """
    n = g.node_count
    nbr = [set(nb) for nb in g.adjacency]
    counts = np.zeros((n, 5), dtype=np.int64)

    for a, b in g.edge_list():
        na, nb = nbr[a], nbr[b]
        inse = na & nb

        # wedges centred at b: c ~ b, c !~ a; a < c dedups the two discovering edges
        for c in nb - na:
            if c != a and a < c:
                counts[a, 1] += 1
                counts[b, 1] += 1
                counts[c, 1] += 1
        # wedges centred at a
        for c in na - nb:
            if c != b and b < c:
                counts[a, 1] += 1
                counts[b, 1] += 1
                counts[c, 1] += 1

        # diamonds: (a, b) is the diagonal, c and d both in Inse but not adjacent
        common = sorted(inse)
        for i, c in enumerate(common):
            nc = nbr[c]
            for d in common[i + 1:]:
                if d not in nc:
                    for v in (a, b, c, d):
                        counts[v, 3] += 1

        for c in common:
            if c <= b:
                continue
            # triangle a < b < c
            for v in (a, b, c):
                counts[v, 0] += 1
            nc = nbr[c]
            tri = inse & nc
            for d in tri:
                if d > c:
                    for v in (a, b, c, d):
                        counts[v, 2] += 1
            # paws: the tail attaches to exactly one triangle vertex
            tset = {a, b, c}
            for x, y, z in ((a, b, c), (b, a, c), (c, a, b)):
                for d in nbr[x]:
                    if d in tset or d in nbr[y] or d in nbr[z]:
                        continue
                    for v in (a, b, c, d):
                        counts[v, 4] += 1
    return counts


def _classify_subsets(A: np.ndarray, combos: np.ndarray) -> dict[MotifKind, np.ndarray]:
    k = combos.shape[1]
    pairs = list(itertools.combinations(range(k), 2))
    deg = np.zeros(combos.shape, dtype=np.int64)
    ecount = np.zeros(len(combos), dtype=np.int64)
    for i, j in pairs:
        e = A[combos[:, i], combos[:, j]]
        ecount += e
        deg[:, i] += e
        deg[:, j] += e
    if k == 3:
        return {MotifKind.MT31: ecount == 3, MotifKind.MT32: ecount == 2}
    sdeg = np.sort(deg, axis=1)
    paw = (ecount == 4) & (sdeg[:, 0] == 1) & (sdeg[:, 3] == 3)
    return {MotifKind.MT41: ecount == 6, MotifKind.MT42: ecount == 5, MotifKind.MT43: paw}


def count_nmd_bruteforce(g: Graph) -> np.ndarray:
    """Reference NMD by classifying every 3- and 4-node induced subgraph."""
    n = g.node_count
    if n > BRUTEFORCE_MAX_NODES:
        raise GraphError(f"brute-force census limited to {BRUTEFORCE_MAX_NODES} nodes, got {n}")
    counts = np.zeros((n, 5), dtype=np.int64)
    A = np.zeros((n, n), dtype=np.int64)
    for u, v in g.edges:
        A[u, v] = A[v, u] = 1
    for k in (3, 4):
        if n < k:
            continue
        combos = np.fromiter(
            itertools.chain.from_iterable(itertools.combinations(range(n), k)), dtype=np.int64
        ).reshape(-1, k)
        for kind, mask in _classify_subsets(A, combos).items():
            members = combos[mask].ravel()
            counts[:, kind] += np.bincount(members, minlength=n)
    return counts


def motif_totals(nmd: np.ndarray) -> np.ndarray:
    """Number of motif instances in the whole graph, per kind."""
    orders = np.array([m.order for m in MOTIFS])
    return nmd.sum(axis=0) // orders


def rewire_null_model(g: Graph, swaps: int, seed: int, max_tries: int | None = None) -> Graph:
    """Degree-preserving randomization by repeated double-edge swaps.

    Picks edges ``(a, b)`` and ``(c, d)`` and rewires them to ``(a, d)``,
    ``(c, b)`` unless that creates a self-loop or a duplicate edge.
    """
    if g.edge_count < 2:
        raise GraphError(f"rewiring needs at least 2 edges, got {g.edge_count}")
    if swaps < 1:
        raise ValueError("swaps must be positive")
    rng = np.random.default_rng(seed)
    edges = list(g.edge_list())
    present = set(edges)
    meta = dict(g.edges)
    max_tries = max_tries if max_tries is not None else 10 * swaps
    done = tries = 0
    m = len(edges)
    while done < swaps and tries < max_tries:
        tries += 1
        i, j = rng.choice(m, size=2, replace=False)
        a, b = edges[i]
        c, d = edges[j]
        if rng.random() < 0.5:
            c, d = d, c
        if len({a, b, c, d}) < 4:
            continue
        e1 = (min(a, d), max(a, d))
        e2 = (min(c, b), max(c, b))
        if e1 in present or e2 in present:
            continue
        present.difference_update((edges[i], edges[j]))
        present.update((e1, e2))
        meta[e1] = meta.pop(edges[i])
        meta[e2] = meta.pop(edges[j])
        edges[i], edges[j] = e1, e2
        done += 1
    return _from_index_edges(g.node_ids, meta)


@dataclass(frozen=True)
class SignificanceReport:
    motif: MotifKind
    f_ori: int
    f_rand_mean: float
    f_rand_std: float
    z_score: float
    passes_P: bool
    passes_U: bool
    passes_D: bool
    zero_variance: bool = False


DEFAULT_THRESHOLDS = {"P": 2.0, "U": 4, "D": 0.1}


def motif_significance(
    g: Graph,
    motif: MotifKind,
    ensemble: int = 100,
    seed: int = 0,
    thresholds: dict | None = None,
    swaps_per_edge: int = 10,
) -> SignificanceReport:
    """Over-representation of ``motif`` against rewired null graphs.

    ``P`` is a z-score cutoff, ``U`` a minimum raw frequency and ``D`` the
    minimum relative excess over the null mean.
    """
    if ensemble < 2:
        raise ValueError("ensemble must be at least 2")
    th = {**DEFAULT_THRESHOLDS, **(thresholds or {})}
    motif = MotifKind(motif)
    f_ori = int(motif_totals(count_nmd(g))[motif])
    ss = np.random.SeedSequence(seed)
    freqs = []
    for child in ss.spawn(ensemble):
        seed_i = int(child.generate_state(1)[0])
        null = rewire_null_model(g, swaps=max(1, swaps_per_edge * g.edge_count), seed=seed_i)
        freqs.append(int(motif_totals(count_nmd(null))[motif]))
    return significance_from_counts(motif, f_ori, freqs, th)


def significance_from_counts(motif, f_ori: int, rand_freqs: Sequence[float], thresholds: dict | None = None):
    th = {**DEFAULT_THRESHOLDS, **(thresholds or {})}
    freqs = np.asarray(rand_freqs, dtype=np.float64)
    mean = float(freqs.mean())
    std = float(freqs.std(ddof=1)) if freqs.size > 1 else 0.0
    return _report(MotifKind(motif), f_ori, mean, std, th)


def _report(motif, f_ori, mean, std, th) -> SignificanceReport:
    diff = f_ori - mean
    zero_var = std == 0.0
    if zero_var:
        z = 0.0 if diff == 0 else math.copysign(math.inf, diff)
    else:
        z = diff / std
    return SignificanceReport(
        motif=motif,
        f_ori=int(f_ori),
        f_rand_mean=mean,
        f_rand_std=std,
        z_score=z,
        passes_P=z > th["P"],
        passes_U=f_ori >= th["U"],
        passes_D=diff > th["D"] * mean,
        zero_variance=zero_var,
    )


NMD_COLUMNS = ("node_id", "mt31", "mt32", "mt41", "mt42", "mt43")


def write_nmd_csv(path, g: Graph, nmd: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NMD_COLUMNS)
        for nid, row in zip(g.node_ids, nmd):
            w.writerow([nid, *map(int, row)])


def read_nmd_csv(path, g: Graph) -> np.ndarray:
    out = np.zeros((g.node_count, 5), dtype=np.int64)
    seen = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != NMD_COLUMNS:
            raise ValueError(f"{path}: expected header {','.join(NMD_COLUMNS)}")
        for row in reader:
            i = g.index_of(row["node_id"])
            out[i] = [int(row[c]) for c in NMD_COLUMNS[1:]]
            seen.add(i)
    if len(seen) != g.node_count:
        raise ValueError(f"{path}: NMD table does not cover every node")
    return out
