"""Localisation-validation metrics."""

from locvalid.metrics.aggregate import aggregate_accuracy, feature_detection_rate, k_grid
from locvalid.metrics.localisation import (
    KEY_METRICS,
    METRICS,
    LocalisationScore,
    dice,
    fpp,
    iou,
    key_slice,
    la,
    pla,
    score_slice,
)
from locvalid.metrics.ranking import classification_auc, loc_auc, rank_auc

__all__ = [
    "KEY_METRICS",
    "METRICS",
    "LocalisationScore",
    "aggregate_accuracy",
    "classification_auc",
    "dice",
    "feature_detection_rate",
    "fpp",
    "iou",
    "k_grid",
    "key_slice",
    "la",
    "loc_auc",
    "pla",
    "rank_auc",
    "score_slice",
]
