"""Sample-level summaries of key-slice scores."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from locvalid.exceptions import EmptyInputError

FEATURE_CUTOFF = 0.6


def k_grid(k_min: float = 0.5, k_max: float = 0.95, k_step: float = 0.05) -> np.ndarray:
    """Inclusive grid of accuracy thresholds, rounded to kill float drift."""
    if k_step <= 0:
        raise ValueError("k_step must be positive")
    n = int(np.floor((k_max - k_min) / k_step + 1e-9)) + 1
    return np.round(k_min + k_step * np.arange(n), 10)


def aggregate_accuracy(values: Sequence[float], ks=None) -> np.ndarray:
    """Fraction of cases whose key-slice score strictly exceeds each ``k``.

    Args:
        values: One key-slice score per case (typically PLA at x = 0.6).
        ks: Thresholds in ``[0.5, 1)``; defaults to 0.50, 0.55, ..., 0.95.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyInputError("aggregate_accuracy received no values")
    ks = k_grid() if ks is None else np.asarray(ks, dtype=np.float64).ravel()
    if ks.size == 0:
        raise EmptyInputError("aggregate_accuracy received no thresholds")
    if np.any(ks < 0.5) or np.any(ks >= 1.0):
        raise ValueError("every k must lie in [0.5, 1)")
    return (v[None, :] > ks[:, None]).mean(axis=1)


def feature_detection_rate(la_values: Sequence[float], cutoff: float = FEATURE_CUTOFF) -> tuple[int, float]:
    """``(count present, fraction with LA strictly over cutoff)`` for one feature."""
    v = np.asarray(la_values, dtype=np.float64).ravel()
    if v.size == 0:
        raise EmptyInputError("feature_detection_rate received no values")
    return int(v.size), float(np.count_nonzero(v > cutoff) / v.size)
