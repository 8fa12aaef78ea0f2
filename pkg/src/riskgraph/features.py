"""Attribute and structural feature tensors.

Raw attributes go through an optional Box-Cox power transform, a supervised
Chi2 discretization into at most ``max_bins`` intervals, and one-hot coding.
Structural features stack degree, flight degree, transport frequency and the
node motif degree columns, each scaled to ``[0, 1]``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .graph import Graph
from .validation import check_features, check_labels

SIG_LEVELS = (0.5, 0.1, 0.05, 0.01, 0.005, 0.001)

# nodes.csv column -> attribute family, in AFT column order
ATTRIBUTE_FAMILIES = {
    "population_density": "demo",
    "icu_beds_per_1000": "med",
    "death_rate": "med",
    "temperature_c": "geo_clim",
    "unemployment_rate": "eco",
    "mobility_mean": "mobility",
}
STATIC_ATTRIBUTES = tuple(ATTRIBUTE_FAMILIES)
DYNAMIC_ATTRIBUTES = ("confirmed_14d", "mobility_mean", "temperature_c")

SFT_COLUMNS = ("degree", "flight_degree", "transport_freq", "mt31", "mt32", "mt41", "mt42", "mt43")


def chi2_statistic(table) -> float:
    """Pearson chi-square of a contingency table (intervals x classes).

    Cells whose expected count is zero contribute nothing.
    """
    A = np.asarray(table, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"contingency table must be 2-D, got shape {A.shape}")
    N = A.sum()
    if N <= 0:
        raise ValueError("contingency table is all zeros")
    E = A.sum(axis=1, keepdims=True) * A.sum(axis=0, keepdims=True) / N
    mask = E > 0
    return float(np.sum((A[mask] - E[mask]) ** 2 / E[mask]))


def _pair_chi2(counts: np.ndarray) -> np.ndarray:
    """Chi-square for each pair of adjacent intervals; counts is (k, c)."""
    A = np.stack([counts[:-1], counts[1:]], axis=1)  # (k-1, 2, c)
    R = A.sum(axis=2, keepdims=True)
    C = A.sum(axis=1, keepdims=True)
    N = R.sum(axis=1, keepdims=True)
    E = R * C / np.where(N > 0, N, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(E > 0, (A - E) ** 2 / E, 0.0)
    return terms.sum(axis=(1, 2))


def _merge(counts: np.ndarray, cuts: np.ndarray, i: int):
    counts = counts.copy()
    counts[i] += counts[i + 1]
    return np.delete(counts, i + 1, axis=0), np.delete(cuts, i)


def _chimerge(counts, cuts, threshold: float, min_bins: int = 1):
    """Merge lowest-chi2 neighbours while that chi2 is at or below ``threshold``."""
    while len(counts) > min_bins:
        chi = _pair_chi2(counts)
        i = int(np.argmin(chi))
        if chi[i] > threshold:
            break
        counts, cuts = _merge(counts, cuts, i)
    return counts, cuts


def _initial_intervals(values: np.ndarray, codes: np.ndarray, n_classes: int):
    distinct, inverse = np.unique(values, return_inverse=True)
    counts = np.zeros((len(distinct), n_classes), dtype=np.int64)
    np.add.at(counts, (inverse, codes), 1)
    cuts = (distinct[:-1] + distinct[1:]) / 2.0
    return counts, cuts


def inconsistency_rate(bins: np.ndarray, codes: np.ndarray) -> float:
    """Share of rows not in the majority class of their (joint) bin pattern."""
    bins = np.asarray(bins)
    if bins.ndim == 1:
        bins = bins[:, None]
    n = len(codes)
    if n == 0:
        return 0.0
    _, pattern = np.unique(bins, axis=0, return_inverse=True)
    pattern = pattern.ravel()
    n_classes = int(codes.max()) + 1
    table = np.zeros((pattern.max() + 1, n_classes), dtype=np.int64)
    np.add.at(table, (pattern, codes), 1)
    return float((table.sum(axis=1) - table.max(axis=1)).sum() / n)


@dataclass
class DiscretizationScheme:
    """Per-attribute cut points; interval ``i`` is ``[cut[i-1], cut[i])``."""

    cut_points: dict[str, np.ndarray] = field(default_factory=dict)
    max_bins: int = 10
    flags: dict[str, list[str]] = field(default_factory=dict)

    def n_bins(self, name: str) -> int:
        return len(self.cut_points[name]) + 1

    def assign(self, name: str, values) -> np.ndarray:
        return np.searchsorted(self.cut_points[name], np.asarray(values, dtype=np.float64), side="right")

    def to_json(self) -> str:
        payload = {name: [float(c) for c in cuts] for name, cuts in self.cut_points.items()}
        return json.dumps(payload, indent=2, sort_keys=False)

    @classmethod
    def from_json(cls, text: str, max_bins: int = 10) -> "DiscretizationScheme":
        raw = json.loads(text)
        cuts = {}
        for name, pts in raw.items():
            arr = np.asarray(pts, dtype=np.float64)
            if arr.size > 1 and not np.all(np.diff(arr) > 0):
                raise ValueError(f"cut points for {name!r} are not strictly increasing")
            cuts[name] = arr
        return cls(cut_points=cuts, max_bins=max_bins)


class Chi2Discretizer(TransformerMixin, BaseEstimator):
    """Supervised discretizer following the two-phase Chi2 algorithm.

    Phase one lowers a global significance level over all columns while the
    joint inconsistency rate stays within the limit. Phase two keeps lowering
    it column by column, freezing a column as soon as its next merge would
    break the limit. A final pass caps every column at ``max_bins``.

    ``transform`` returns integer bin indices, one column per input column.
    """

    def __init__(self, sig_levels=SIG_LEVELS, inconsistency_limit=0.05, max_bins=10):
        self.sig_levels = sig_levels
        self.inconsistency_limit = inconsistency_limit
        self.max_bins = max_bins

    def fit(self, X, y):
        X = check_features(X)
        y = check_labels(y, n=X.shape[0])
        if self.max_bins < 1:
            raise ValueError("max_bins must be at least 1")
        self.classes_, codes = np.unique(y, return_inverse=True)
        n_classes = len(self.classes_)
        df = max(n_classes - 1, 1)
        sigs = list(self.sig_levels)
        thresholds = [stats.chi2.ppf(1.0 - s, df) for s in sigs]

        states = [_initial_intervals(X[:, j], codes, n_classes) for j in range(X.shape[1])]
        self.flags_ = [[] for _ in range(X.shape[1])]
        for j, (counts, _) in enumerate(states):
            if len(counts) < 2:
                self.flags_[j].append("single_value")

        def binned(sts):
            return np.column_stack(
                [np.searchsorted(cuts, X[:, j], side="right") for j, (_, cuts) in enumerate(sts)]
            )

        # raw data can already be inconsistent (ties across classes)
        limit = max(float(self.inconsistency_limit), inconsistency_rate(binned(states), codes))
        self.effective_limit_ = limit

        level = -1
        for k, thr in enumerate(thresholds):
            cand = [_chimerge(c, cu, thr) for c, cu in states]
            if inconsistency_rate(binned(cand), codes) > limit:
                break
            states, level = cand, k

        col_level = [level] * len(states)
        active = [True] * len(states)
        while any(active):
            for j in range(len(states)):
                if not active[j]:
                    continue
                nxt = col_level[j] + 1
                if nxt >= len(thresholds) or len(states[j][0]) <= 1:
                    active[j] = False
                    continue
                cand = list(states)
                cand[j] = _chimerge(*states[j], thresholds[nxt])
                if inconsistency_rate(binned(cand), codes) > limit:
                    active[j] = False
                else:
                    states, col_level[j] = cand, nxt

        for j, (counts, cuts) in enumerate(states):
            if len(counts) > self.max_bins:
                states[j] = _chimerge(counts, cuts, np.inf, min_bins=self.max_bins)
                self.flags_[j].append("capped_at_max_bins")

        self.cut_points_ = [cuts for _, cuts in states]
        self.sig_level_ = [sigs[lv] if lv >= 0 else None for lv in col_level]
        self.inconsistency_ = inconsistency_rate(binned(states), codes)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "cut_points_")
        X = check_features(X, n_features=self.n_features_in_)
        return np.column_stack(
            [np.searchsorted(c, X[:, j], side="right") for j, c in enumerate(self.cut_points_)]
        ).astype(np.int64)

    @property
    def n_bins_(self) -> list[int]:
        return [len(c) + 1 for c in self.cut_points_]


def chi2_discretize(values, labels, sig_levels=SIG_LEVELS, inconsistency_limit=0.05, max_bins=10, name="x"):
    """Discretize a single attribute; returns a one-entry scheme."""
    values = np.asarray(values, dtype=np.float64)
    if np.unique(values).size < 2:
        warnings.warn(f"attribute {name!r} has fewer than 2 distinct values; using a single bin")
    disc = Chi2Discretizer(sig_levels, inconsistency_limit, max_bins).fit(values[:, None], labels)
    return DiscretizationScheme(
        cut_points={name: disc.cut_points_[0]}, max_bins=max_bins, flags={name: disc.flags_[0]}
    )


LAMBDA_GRID = np.round(np.arange(-500, 501) * 0.01, 2)


def boxcox_transform(x, lmbda: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if lmbda == 0:
        return np.log(x)
    return np.expm1(lmbda * np.log(x)) / lmbda


def boxcox_loglik(x, lmbda: float) -> float:
    """Profile log-likelihood of a Box-Cox normal model at ``lmbda``."""
    x = np.asarray(x, dtype=np.float64)
    y = boxcox_transform(x, lmbda)
    n = x.size
    return float((lmbda - 1.0) * np.log(x).sum() - 0.5 * n * np.log(y.var()))


def boxcox(values, lmbda: float | None = None):
    """Box-Cox transform of strictly positive data.

    With ``lmbda=None`` the exponent maximizing the log-likelihood on the grid
    ``-5, -4.99, ..., 5`` is used. Returns ``(transformed, lmbda)``.
    """
    x = np.asarray(values, dtype=np.float64)
    if np.any(~np.isfinite(x)) or np.any(x <= 0):
        raise ValueError("boxcox needs finite positive values; shift with x - min(x) + 1 first")
    if lmbda is None:
        if np.ptp(x) == 0:
            lmbda = 1.0
        else:
            ll = [boxcox_loglik(x, lm) for lm in LAMBDA_GRID]
            lmbda = float(LAMBDA_GRID[int(np.argmax(ll))])
    return boxcox_transform(x, lmbda), float(lmbda)


class BoxCoxTransformer(TransformerMixin, BaseEstimator):
    """Column-wise Box-Cox with a ``x - min + 1`` shift for non-positive columns."""

    def fit(self, X, y=None):
        X = check_features(X)
        self.shift_ = np.where(X.min(axis=0) <= 0, 1.0 - X.min(axis=0), 0.0)
        self.lambdas_ = np.array([boxcox(X[:, j] + self.shift_[j])[1] for j in range(X.shape[1])])
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "lambdas_")
        X = check_features(X, n_features=self.n_features_in_)
        # unseen values below the fitted minimum are clamped into the domain
        Xs = np.maximum(X + self.shift_, np.finfo(np.float64).tiny)
        return np.column_stack([boxcox_transform(Xs[:, j], lm) for j, lm in enumerate(self.lambdas_)])


def one_hot(category: int, k: int) -> np.ndarray:
    if k < 1:
        raise ValueError("k must be positive")
    if not 0 <= category < k:
        raise ValueError(f"category {category} out of range [0, {k})")
    out = np.zeros(k, dtype=np.float64)
    out[category] = 1.0
    return out


def _one_hot_block(codes: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((len(codes), k), dtype=np.float64)
    out[np.arange(len(codes)), codes] = 1.0
    return out


def build_aft(raw: Mapping[str, Sequence[float]], scheme: DiscretizationScheme, attributes=None, node_ids=None):
    """Concatenate one one-hot block per attribute, in ``attributes`` order."""
    attributes = list(attributes if attributes is not None else scheme.cut_points)
    blocks = []
    n = None
    for name in attributes:
        if name not in raw:
            raise KeyError(f"attribute {name!r} missing from raw table")
        if name not in scheme.cut_points:
            raise KeyError(f"no discretization scheme for attribute {name!r}")
        col = np.asarray(raw[name], dtype=np.float64)
        bad = np.flatnonzero(~np.isfinite(col))
        if bad.size:
            who = node_ids[bad[0]] if node_ids is not None else int(bad[0])
            raise ValueError(f"node {who!r} is missing attribute {name!r}")
        n = len(col) if n is None else n
        if len(col) != n:
            raise ValueError(f"attribute {name!r} has {len(col)} rows, expected {n}")
        blocks.append(_one_hot_block(scheme.assign(name, col), scheme.n_bins(name)))
    if not blocks:
        raise ValueError("no attributes to encode")
    return np.hstack(blocks)


class AttributeEncoder(TransformerMixin, BaseEstimator):
    """Box-Cox -> Chi2 discretization -> one-hot, producing the attribute tensor.

    ``fit`` needs labels (Chi2 is supervised); rows with label ``-1`` are
    used only for the unsupervised Box-Cox fit.
    """

    def __init__(self, attributes=STATIC_ATTRIBUTES, boxcox=True, sig_levels=SIG_LEVELS,
                 inconsistency_limit=0.05, max_bins=10):
        self.attributes = attributes
        self.boxcox = boxcox
        self.sig_levels = sig_levels
        self.inconsistency_limit = inconsistency_limit
        self.max_bins = max_bins

    def fit(self, X, y):
        X = check_features(X, n_features=len(self.attributes))
        y = np.asarray(y)
        self.boxcox_ = BoxCoxTransformer().fit(X) if self.boxcox else None
        Xt = self._pre(X)
        labelled = y >= 0
        self.discretizer_ = Chi2Discretizer(self.sig_levels, self.inconsistency_limit, self.max_bins)
        self.discretizer_.fit(Xt[labelled], y[labelled])
        self.scheme_ = DiscretizationScheme(
            cut_points=dict(zip(self.attributes, self.discretizer_.cut_points_)),
            max_bins=self.max_bins,
            flags=dict(zip(self.attributes, self.discretizer_.flags_)),
        )
        self.n_features_in_ = X.shape[1]
        return self

    def _pre(self, X):
        return self.boxcox_.transform(X) if self.boxcox_ is not None else X

    def transform(self, X):
        check_is_fitted(self, "scheme_")
        X = check_features(X, n_features=self.n_features_in_)
        Xt = self._pre(X)
        return build_aft({a: Xt[:, j] for j, a in enumerate(self.attributes)}, self.scheme_, self.attributes)

    def get_state(self) -> dict:
        check_is_fitted(self, "scheme_")
        return {
            "attributes": list(self.attributes),
            "boxcox_shift": None if self.boxcox_ is None else self.boxcox_.shift_.tolist(),
            "boxcox_lambda": None if self.boxcox_ is None else self.boxcox_.lambdas_.tolist(),
            "cut_points": {a: [float(c) for c in cuts] for a, cuts in self.scheme_.cut_points.items()},
            "max_bins": self.max_bins,
        }

    @classmethod
    def from_state(cls, state: dict) -> "AttributeEncoder":
        enc = cls(attributes=tuple(state["attributes"]), boxcox=state["boxcox_lambda"] is not None,
                  max_bins=state.get("max_bins", 10))
        if enc.boxcox:
            bc = BoxCoxTransformer()
            bc.shift_ = np.asarray(state["boxcox_shift"], dtype=np.float64)
            bc.lambdas_ = np.asarray(state["boxcox_lambda"], dtype=np.float64)
            bc.n_features_in_ = len(bc.lambdas_)
            enc.boxcox_ = bc
        else:
            enc.boxcox_ = None
        enc.scheme_ = DiscretizationScheme(
            cut_points={a: np.asarray(c, dtype=np.float64) for a, c in state["cut_points"].items()},
            max_bins=enc.max_bins,
        )
        enc.n_features_in_ = len(enc.attributes)
        return enc


def build_sft(g: Graph, nmd: np.ndarray, transport_freq=None) -> np.ndarray:
    """Structural tensor: ``SFT_COLUMNS`` per node, each column divided by its max."""
    nmd = np.asarray(nmd, dtype=np.float64)
    if nmd.shape != (g.node_count, 5):
        raise ValueError(f"NMD table must have shape ({g.node_count}, 5), got {nmd.shape}")
    if transport_freq is None:
        transport_freq = g.flight_weight()
    transport_freq = np.asarray(transport_freq, dtype=np.float64)
    if transport_freq.shape != (g.node_count,):
        raise ValueError("transport_freq must have one entry per node")
    if np.any(transport_freq < 0):
        raise ValueError("transport_freq must be non-negative")
    raw = np.column_stack([g.degree().astype(np.float64), g.flight_degree().astype(np.float64),
                           transport_freq, nmd])
    return max_normalize(raw)


def max_normalize(M: np.ndarray) -> np.ndarray:
    peak = M.max(axis=0) if M.shape[0] else np.zeros(M.shape[1])
    return np.divide(M, peak, out=np.zeros_like(M), where=peak > 0)
