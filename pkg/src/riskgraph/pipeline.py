"""Glue between datasets and the classifier: featurize, fit, score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, split_dataset, split_indices
from .features import DYNAMIC_ATTRIBUTES, STATIC_ATTRIBUTES, AttributeEncoder, build_sft
from .graph import renormalized_propagation
from .model import RiskGCNClassifier, evaluate
from .motifs import count_nmd


@dataclass
class Features:
    propagation: np.ndarray
    structure: np.ndarray
    attributes: object  # AFT matrix, or list of per-timestamp matrices
    encoder: AttributeEncoder
    nmd: np.ndarray


def dynamic_matrix(d: Dataset) -> tuple[list[np.ndarray], np.ndarray]:
    """Per-timestamp raw matrices and their row-stack."""
    mats = [np.column_stack([s.attributes[c] for c in DYNAMIC_ATTRIBUTES]).astype(np.float64) for s in d.timestamps]
    return mats, np.vstack(mats)


def featurize(d: Dataset, fit_labels: np.ndarray, dynamic: bool = False, encoder: AttributeEncoder | None = None,
              weighted: bool = False, nmd: np.ndarray | None = None, **encoder_params) -> Features:
    """Build P, SFT and AFT for ``d``.

    ``fit_labels`` holds the labels visible to the supervised discretizer
    (``-1`` for hidden nodes). A pre-fitted ``encoder`` is reused as is.
    """
    P = renormalized_propagation(d.graph, weighted=weighted)
    nmd = count_nmd(d.graph) if nmd is None else nmd
    sft = build_sft(d.graph, nmd)
    if dynamic:
        if not d.timestamps:
            raise ValueError("dataset has no timestamps")
        mats, stacked = dynamic_matrix(d)
        if encoder is None:
            encoder = AttributeEncoder(attributes=DYNAMIC_ATTRIBUTES, **encoder_params)
            encoder.fit(stacked, np.tile(fit_labels, len(mats)))
        aft = [encoder.transform(m) for m in mats]
    else:
        X = d.attribute_matrix(STATIC_ATTRIBUTES)
        if encoder is None:
            encoder = AttributeEncoder(attributes=STATIC_ATTRIBUTES, **encoder_params)
            encoder.fit(X, fit_labels)
        aft = encoder.transform(X)
    return Features(propagation=P, structure=sft, attributes=aft, encoder=encoder, nmd=nmd)


def hidden_labels(labels, keep_idx) -> np.ndarray:
    out = np.full(len(labels), -1, dtype=np.int64)
    out[keep_idx] = np.asarray(labels)[keep_idx]
    return out


def run_experiment(d: Dataset, mode="HA", seed: int = 0, split_seed: int | None = None, dynamic: bool = False,
                   features: Features | None = None, **clf_params):
    """Split, featurize on training labels, fit and evaluate; returns a result dict."""
    assign = split_dataset(d.labels, seed=seed if split_seed is None else split_seed)
    tr, va, te = split_indices(assign)
    feats = features or featurize(d, hidden_labels(d.labels, tr), dynamic=dynamic)
    clf = RiskGCNClassifier(mode=mode, seed=seed, **clf_params)
    clf.fit(feats.attributes, d.labels, propagation=feats.propagation, structure=feats.structure,
            train_idx=tr, val_idx=va)
    probs = clf.predict_proba(feats.attributes, propagation=feats.propagation, structure=feats.structure)
    return {
        "classifier": clf,
        "features": feats,
        "split": assign,
        "val": evaluate(probs[va], d.labels[va], clf.class_count),
        "test": evaluate(probs[te], d.labels[te], clf.class_count),
        "history": clf.history_,
    }
