"""Rank-based (Mann-Whitney) area under the ROC curve."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from locvalid.exceptions import DimensionError, UndefinedMetricError


def rank_auc(scores, labels) -> float:
    """AUC from average ranks: ``(R_pos - n_pos (n_pos + 1) / 2) / (n_pos n_neg)``.

    Tied scores share their average rank, so a positive tied with a negative
    counts as half a correct ordering.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise DimensionError(f"{s.size} scores but {y.size} labels", axis="length")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative examples")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def classification_auc(probs, labels) -> float:
    """Case-level AUC of predicted probabilities against 0/1 labels."""
    y = np.asarray(labels)
    if y.size and not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return rank_auc(probs, y)


def loc_auc(saliency, ann) -> float:
    """Pixel-level AUC: flattened saliency as scores, annotation mask as truth."""
    s = np.asarray(saliency, dtype=np.float64)
    a = np.asarray(ann).astype(bool)
    if s.shape != a.shape:
        raise DimensionError(f"saliency {s.shape} and annotation {a.shape} differ", axis="spatial")
    return rank_auc(s.ravel(), a.ravel())
