"""Dataset files, validation, splitting and a synthetic stand-in generator.

File layout (UTF-8, comma separated, header required)::

    nodes.csv   node_id, population_density, icu_beds_per_1000, death_rate,
                temperature_c, unemployment_rate, mobility_mean, confirmed_14d[, label]
    edges.csv   src_id, dst_id, kind, weight
    t_<YYYY-MM-DD>.csv  node_id, confirmed_14d, mobility_mean, temperature_c
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import EDGE_KINDS, Graph, build_graph
from .io_utils import atomic_write_text
from .model import RISK_LABELS, assign_risk_label, parse_risk_label

log = logging.getLogger(__name__)

NODE_COLUMNS = ("node_id", "population_density", "icu_beds_per_1000", "death_rate", "temperature_c",
                "unemployment_rate", "mobility_mean", "confirmed_14d")
EDGE_COLUMNS = ("src_id", "dst_id", "kind", "weight")
TIMESTAMP_COLUMNS = ("node_id", "confirmed_14d", "mobility_mean", "temperature_c")
TIMESTAMP_FILE = re.compile(r"^t_(\d{4}-\d{2}-\d{2})\.csv$")
SPLITS = ("train", "validation", "test")


class SchemaError(ValueError):
    def __init__(self, path, line, column, message):
        super().__init__(f"{path}:{line}: column {column!r}: {message}")
        self.path, self.line, self.column = str(path), line, column


@dataclass
class Snapshot:
    date: dt.date
    attributes: dict[str, np.ndarray]

    def __eq__(self, other):
        return (isinstance(other, Snapshot) and self.date == other.date
                and _attrs_equal(self.attributes, other.attributes))


@dataclass
class Dataset:
    graph: Graph
    attributes: dict[str, np.ndarray]  # column -> per-node values (static)
    labels: np.ndarray  # RiskLevel ints, one per node
    timestamps: list[Snapshot] = field(default_factory=list)
    community: np.ndarray | None = None  # synthetic data only

    @property
    def node_ids(self):
        return self.graph.node_ids

    def attribute_matrix(self, columns) -> np.ndarray:
        return np.column_stack([self.attributes[c] for c in columns])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.graph == other.graph and _attrs_equal(self.attributes, other.attributes)
                and np.array_equal(self.labels, other.labels) and self.timestamps == other.timestamps)


def _attrs_equal(a, b) -> bool:
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def _read_rows(path, required, optional=()):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = tuple(reader.fieldnames or ())
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(path, 1, missing[0], "missing from header")
        extra = [c for c in header if c not in required and c not in optional]
        if extra:
            raise SchemaError(path, 1, extra[0], "unexpected column")
        for lineno, row in enumerate(reader, start=2):
            if None in row or any(v is None for v in row.values()):
                raise SchemaError(path, lineno, "*", "wrong number of fields")
            yield lineno, row


def _number(path, line, col, text, integer=False):
    try:
        val = int(text) if integer else float(text)
    except ValueError:
        raise SchemaError(path, line, col, f"not a {'integer' if integer else 'number'}: {text!r}") from None
    if not integer and not math.isfinite(val):
        raise SchemaError(path, line, col, f"non-finite value {text!r}")
    return val


def _read_nodes(path):
    ids, cols, labels = [], {c: [] for c in NODE_COLUMNS[1:]}, []
    has_label = None
    seen = set()
    for line, row in _read_rows(path, NODE_COLUMNS, optional=("label",)):
        has_label = "label" in row if has_label is None else has_label
        nid = row["node_id"].strip()
        if not nid:
            raise SchemaError(path, line, "node_id", "empty node id")
        if nid in seen:
            raise SchemaError(path, line, "node_id", f"duplicate node id {nid!r}")
        seen.add(nid)
        ids.append(nid)
        for c in NODE_COLUMNS[1:-1]:
            cols[c].append(_number(path, line, c, row[c]))
        n_conf = _number(path, line, "confirmed_14d", row["confirmed_14d"], integer=True)
        if n_conf < 0:
            raise SchemaError(path, line, "confirmed_14d", "must be non-negative")
        cols["confirmed_14d"].append(n_conf)
        for c in ("death_rate", "unemployment_rate"):
            if not 0.0 <= cols[c][-1] <= 1.0:
                raise SchemaError(path, line, c, f"rate {cols[c][-1]} outside [0, 1]")
        if has_label:
            try:
                labels.append(int(parse_risk_label(row["label"])))
            except ValueError as exc:
                raise SchemaError(path, line, "label", str(exc)) from None
        else:
            labels.append(int(assign_risk_label(n_conf)))
    attrs = {c: np.asarray(v, dtype=np.int64 if c == "confirmed_14d" else np.float64) for c, v in cols.items()}
    return ids, attrs, np.asarray(labels, dtype=np.int64)


def _read_edges(path, ids):
    known = set(ids)
    edges = []
    for line, row in _read_rows(path, EDGE_COLUMNS):
        src, dst, kind = row["src_id"].strip(), row["dst_id"].strip(), row["kind"].strip()
        for col, nid in (("src_id", src), ("dst_id", dst)):
            if nid not in known:
                raise SchemaError(path, line, col, f"unknown node id {nid!r}")
        if src == dst:
            raise SchemaError(path, line, "dst_id", f"self-loop on {src!r}")
        if kind not in EDGE_KINDS:
            raise SchemaError(path, line, "kind", f"expected one of {EDGE_KINDS}, got {kind!r}")
        w = _number(path, line, "weight", row["weight"])
        if w < 0:
            raise SchemaError(path, line, "weight", "must be non-negative")
        edges.append((src, dst, kind, w))
    return edges


def _read_timeseries(directory, ids):
    directory = Path(directory)
    files = []
    for p in sorted(directory.iterdir()):
        m = TIMESTAMP_FILE.match(p.name)
        if m:
            files.append((dt.date.fromisoformat(m.group(1)), p))
    if not files:
        raise SchemaError(directory, 0, "*", "no t_<YYYY-MM-DD>.csv files found")
    index = {nid: i for i, nid in enumerate(ids)}
    snaps = []
    for date, path in files:
        vals = {c: np.full(len(ids), np.nan) for c in TIMESTAMP_COLUMNS[1:]}
        seen = np.zeros(len(ids), dtype=bool)
        for line, row in _read_rows(path, TIMESTAMP_COLUMNS):
            nid = row["node_id"].strip()
            if nid not in index:
                raise SchemaError(path, line, "node_id", f"unknown node id {nid!r}")
            i = index[nid]
            if seen[i]:
                raise SchemaError(path, line, "node_id", f"duplicate node id {nid!r}")
            seen[i] = True
            c = _number(path, line, "confirmed_14d", row["confirmed_14d"], integer=True)
            if c < 0:
                raise SchemaError(path, line, "confirmed_14d", "must be non-negative")
            vals["confirmed_14d"][i] = c
            for col in ("mobility_mean", "temperature_c"):
                vals[col][i] = _number(path, line, col, row[col])
        if not seen.all():
            missing = ids[int(np.flatnonzero(~seen)[0])]
            raise SchemaError(path, 0, "node_id", f"node {missing!r} missing from timestamp")
        snaps.append(Snapshot(date=date, attributes=vals))
    return snaps


def load_dataset(nodes_path, edges_path, timeseries_dir=None) -> Dataset:
    """Read and validate a dataset; labels come from ``confirmed_14d`` when absent."""
    ids, attrs, labels = _read_nodes(nodes_path)
    if not ids:
        raise SchemaError(nodes_path, 2, "node_id", "no nodes")
    graph = build_graph(ids, _read_edges(edges_path, ids))
    snaps = _read_timeseries(timeseries_dir, ids) if timeseries_dir is not None else []
    return Dataset(graph=graph, attributes=attrs, labels=labels, timestamps=snaps)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    return repr(float(x))


def save_dataset(d: Dataset, directory, with_labels: bool = True) -> dict[str, Path]:
    """Write nodes.csv, edges.csv and (if dynamic) ``timeseries/t_<date>.csv``."""
    directory = Path(directory)
    header = NODE_COLUMNS + (("label",) if with_labels else ())
    rows = []
    for i, nid in enumerate(d.node_ids):
        row = [nid] + [_fmt(d.attributes[c][i]) for c in NODE_COLUMNS[1:-1]]
        row.append(int(d.attributes["confirmed_14d"][i]))
        if with_labels:
            row.append(RISK_LABELS[int(d.labels[i])])
        rows.append(row)
    out = {"nodes": directory / "nodes.csv", "edges": directory / "edges.csv"}
    atomic_write_text(out["nodes"], _csv_text(header, rows))
    erows = []
    for (u, v), (kinds, w) in d.graph.edges.items():
        # a merged edge carrying both kinds is written once per kind, splitting its weight
        ks = sorted(kinds)
        for k in ks:
            erows.append([d.node_ids[u], d.node_ids[v], k, _fmt(w / len(ks))])
    atomic_write_text(out["edges"], _csv_text(EDGE_COLUMNS, erows))
    if d.timestamps:
        ts_dir = directory / "timeseries"
        out["timeseries"] = ts_dir
        for snap in d.timestamps:
            trows = [[nid, int(snap.attributes["confirmed_14d"][i]), _fmt(snap.attributes["mobility_mean"][i]),
                      _fmt(snap.attributes["temperature_c"][i])] for i, nid in enumerate(d.node_ids)]
            atomic_write_text(ts_dir / f"t_{snap.date.isoformat()}.csv", _csv_text(TIMESTAMP_COLUMNS, trows))
    return out


# splitting -----------------------------------------------------------------

def split_dataset(labels, ratios=(0.6, 0.2, 0.2), seed: int = 0) -> np.ndarray:
    """Stratified train/validation/test assignment; returns 0/1/2 per node.

    Each node gets a key ``(rank within its class + 0.5) / class size`` from a
    seeded shuffle; sorting by key interleaves the classes so every prefix of
    the order is close to the class proportions. The sorted order is then cut
    at the global ratio boundaries. Classes with fewer than 3 members get
    uniform random keys instead.
    """
    labels = np.asarray(labels)
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = labels.size
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    keys = np.empty(n)
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        members = members[rng.permutation(members.size)]
        if members.size < 3:
            log.warning("class %s has %d members; splitting it unstratified", c, members.size)
            keys[members] = rng.random(members.size)
        else:
            keys[members] = (np.arange(members.size) + 0.5) / members.size
    tiebreak = rng.permutation(n)
    order = np.lexsort((tiebreak, keys))
    n_train = int(round(ratios[0] * n))
    n_val = min(int(round(ratios[1] * n)), n - n_train)
    assign = np.full(n, 2, dtype=np.int64)
    assign[order[:n_train]] = 0
    assign[order[n_train:n_train + n_val]] = 1
    return assign


def split_indices(assign: np.ndarray):
    return tuple(np.flatnonzero(assign == k) for k in range(3))


# synthetic data --------------------------------------------------------------

# (mean, spread) of each attribute per community, communities ordered by risk
_ATTR_PROFILE = {
    "population_density": lambda k, K: (np.log(50.0) + 2.0 * k / max(K - 1, 1), 0.6),  # log-normal
    "icu_beds_per_1000": lambda k, K: (3.0 - 1.5 * k / max(K - 1, 1), 0.6),
    "death_rate": lambda k, K: (0.01 + 0.04 * k / max(K - 1, 1), 0.012),
    "temperature_c": lambda k, K: (20.0 - 10.0 * k / max(K - 1, 1), 3.5),
    "unemployment_rate": lambda k, K: (0.04 + 0.06 * k / max(K - 1, 1), 0.015),
    "mobility_mean": lambda k, K: (-20.0 + 25.0 * k / max(K - 1, 1), 7.0),
}
_CONFIRMED_RANGE = {0: (0, 0), 1: (1, 150), 2: (151, 750), 3: (751, 5000)}


@dataclass
class SynthConfig:
    n: int = 1000
    communities: int = 4
    edge_prob_in: float | list = 0.02
    edge_prob_out: float = 0.002
    label_rule: str = "community"  # or "community_attr"
    attr_noise: float = 0.5
    flight_hubs: int = 0
    timestamps: int = 0
    seed: int = 0


def synth_dataset(config: SynthConfig | None = None, **overrides) -> Dataset:
    """Stochastic-block-model graph with community-dependent attributes.

    ``edge_prob_in`` may be one probability or one per community. Labels are
    a deterministic function of the community (``label_rule="community"``)
    or of community plus whether the node's population density is above its
    community median (``"community_attr"``). ``attr_noise`` scales the
    within-community attribute spread.
    """
    cfg = config or SynthConfig()
    for k, v in overrides.items():
        if not hasattr(cfg, k):
            raise TypeError(f"unknown synth option {k!r}")
        setattr(cfg, k, v)
    n, K = cfg.n, cfg.communities
    if not n >= K >= 1:
        raise ValueError(f"need n >= communities >= 1, got n={n}, communities={K}")
    p_in = np.broadcast_to(np.asarray(cfg.edge_prob_in, dtype=np.float64), (K,)).copy()
    if np.any((p_in < 0) | (p_in > 1)) or not 0 <= cfg.edge_prob_out <= 1:
        raise ValueError("edge probabilities must lie in [0, 1]")
    if cfg.label_rule not in ("community", "community_attr"):
        raise ValueError(f"unknown label_rule {cfg.label_rule!r}")
    rng = np.random.default_rng(cfg.seed)

    community = np.repeat(np.arange(K), [n // K + (1 if c < n % K else 0) for c in range(K)])
    iu, ju = np.triu_indices(n, k=1)
    same = community[iu] == community[ju]
    prob = np.where(same, p_in[community[iu]], cfg.edge_prob_out)
    keep = rng.random(iu.size) < prob
    ids = [f"N{i:05d}" for i in range(n)]
    edges = [(ids[i], ids[j], "adjacent", 1.0) for i, j in zip(iu[keep], ju[keep])]

    if cfg.flight_hubs:
        hubs = rng.choice(n, size=min(cfg.flight_hubs, n), replace=False)
        for a_i, a in enumerate(hubs):
            for b in hubs[a_i + 1:]:
                if rng.random() < 0.5:
                    edges.append((ids[a], ids[b], "flight", float(rng.integers(1, 20))))

    attrs = {}
    for col, prof in _ATTR_PROFILE.items():
        mu = np.array([prof(c, K)[0] for c in range(K)])[community]
        sd = prof(0, K)[1] * cfg.attr_noise
        vals = mu + sd * rng.standard_normal(n)
        if col == "population_density":
            vals = np.exp(vals)
        elif col in ("death_rate", "unemployment_rate"):
            vals = np.clip(vals, 0.0, 1.0)
        elif col == "icu_beds_per_1000":
            vals = np.maximum(vals, 0.0)
        attrs[col] = vals

    labels = community % 4 if K > 4 else community.copy()
    if K < 4:
        labels = np.round(community * 3 / max(K - 1, 1)).astype(np.int64)
    if cfg.label_rule == "community_attr":
        dens = attrs["population_density"]
        above = np.zeros(n, dtype=bool)
        for c in range(K):
            m = community == c
            above[m] = dens[m] > np.median(dens[m])
        labels = np.minimum(labels + above, 3)
    labels = labels.astype(np.int64)

    lo = np.array([_CONFIRMED_RANGE[int(l)][0] for l in labels])
    hi = np.array([_CONFIRMED_RANGE[int(l)][1] for l in labels])
    attrs["confirmed_14d"] = rng.integers(lo, hi + 1).astype(np.int64)

    snaps = []
    start = dt.date(2020, 3, 1)
    for t in range(cfg.timestamps):
        frac = (t + 1) / cfg.timestamps
        conf = np.round(attrs["confirmed_14d"] * frac * rng.uniform(0.6, 1.0, n)).astype(np.int64)
        snaps.append(Snapshot(date=start + dt.timedelta(days=t), attributes={
            "confirmed_14d": conf,
            "mobility_mean": attrs["mobility_mean"] + rng.normal(0, 3.0, n),
            "temperature_c": attrs["temperature_c"] + rng.normal(0, 2.0, n),
        }))
    graph = build_graph(ids, edges)
    return Dataset(graph=graph, attributes=attrs, labels=labels, timestamps=snaps, community=community)


def nearest_centroid_accuracy(X: np.ndarray, y: np.ndarray) -> float:
    """Training accuracy of a nearest-centroid rule on standardized ``X``."""
    X = (X - X.mean(axis=0)) / np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
    classes = np.unique(y)
    cents = np.stack([X[y == c].mean(axis=0) for c in classes])
    d = ((X[:, None, :] - cents[None]) ** 2).sum(axis=2)
    return float(np.mean(classes[d.argmin(axis=1)] == y))
