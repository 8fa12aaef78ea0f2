"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_features(X, n_features: int | None = None) -> np.ndarray:
    """2-D finite float64 array; 1-D input is treated as a single column."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    X = check_array(X, dtype=np.float64, ensure_min_samples=1, ensure_all_finite=True)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} feature columns, got {X.shape[1]}")
    return X


def check_labels(y, n: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {y.shape}")
    if y.size == 0:
        raise ValueError("labels are empty")
    if n is not None and y.shape[0] != n:
        raise ValueError(f"got {y.shape[0]} labels for {n} rows")
    return y


def check_square(P, n: int | None = None, name: str = "P") -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError(f"{name} must be square, got shape {P.shape}")
    if n is not None and P.shape[0] != n:
        raise ValueError(f"{name} has {P.shape[0]} rows, expected {n}")
    if not np.all(np.isfinite(P)):
        raise ValueError(f"{name} has non-finite entries")
    return P


def check_index(idx, n: int, name: str) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError(f"{name} is empty")
    if idx.min() < 0 or idx.max() >= n:
        raise ValueError(f"{name} has indices outside [0, {n})")
    return idx
