"""Overlap metrics between a thresholded saliency mask and an annotation mask.

All functions compare masks over their last two axes. Leading axes broadcast,
so a stack of masks can be scored in one call; 2-D inputs return ``float``.

With ``overlap = |gc & ann|``:

* ``la  = overlap / |ann|``
* ``fpp = (|gc| - overlap) / total_pixels``
* ``pla = max(la - fpp, 0)``
* ``iou = overlap / |gc | ann|``, ``dice = 2 overlap / (|gc| + |ann|)``
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Optional, Sequence

import numpy as np

from locvalid.exceptions import EmptyInputError, UndefinedMetricError
from locvalid.metrics.ranking import loc_auc
from locvalid.utils.validation import check_mask_pair

METRICS = ("la", "fpp", "pla", "iou", "dice", "auc")
KEY_METRICS = ("la", "pla", "auc", "iou", "dice")


def _counts(gc, ann):
    gc, ann = check_mask_pair(gc, ann)
    gc, ann = np.broadcast_arrays(gc, ann)
    axes = (-2, -1)
    return (
        np.count_nonzero(gc & ann, axis=axes),
        np.count_nonzero(gc, axis=axes),
        np.count_nonzero(ann, axis=axes),
        gc.shape[-2] * gc.shape[-1],
    )


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def la(gc, ann):
    """Fraction of the annotation covered by the saliency mask."""
    overlap, _, n_ann, _ = _counts(gc, ann)
    if np.any(n_ann == 0):
        raise UndefinedMetricError("LA is undefined for an empty annotation mask")
    return _out(overlap / n_ann)


def fpp(gc, ann):
    """False positive penalty: mask pixels outside the annotation over all pixels."""
    overlap, n_gc, _, total = _counts(gc, ann)
    return _out((n_gc - overlap) / total)


def pla(gc, ann):
    """Penalised localisation accuracy, ``max(la - fpp, 0)``."""
    overlap, n_gc, n_ann, total = _counts(gc, ann)
    if np.any(n_ann == 0):
        raise UndefinedMetricError("PLA is undefined for an empty annotation mask")
    return _out(np.maximum(overlap / n_ann - (n_gc - overlap) / total, 0.0))


def iou(gc, ann):
    overlap, n_gc, n_ann, _ = _counts(gc, ann)
    union = n_gc + n_ann - overlap
    if np.any(union == 0):
        raise UndefinedMetricError("IoU is undefined when both masks are empty")
    return _out(overlap / union)


def dice(gc, ann):
    overlap, n_gc, n_ann, _ = _counts(gc, ann)
    denom = n_gc + n_ann
    if np.any(denom == 0):
        raise UndefinedMetricError("Dice is undefined when both masks are empty")
    return _out(2 * overlap / denom)


@dataclass(frozen=True)
class LocalisationScore:
    """Metrics of one slice at saliency threshold ``x``.

    ``auc`` is ``nan`` when the annotation covers the whole slice (no negative
    pixels to rank against).
    """

    slice_index: int
    x: float
    la: float
    fpp: float
    pla: float
    iou: float
    dice: float
    auc: float

    def get(self, metric: str) -> float:
        if metric not in METRICS:
            raise KeyError(f"unknown metric {metric!r}; choose from {METRICS}")
        return getattr(self, metric)

    def to_dict(self) -> dict:
        return asdict(self)


def score_slice(saliency, ann_mask, x: float = 0.6, slice_index: int = 0) -> LocalisationScore:
    """Score one saliency map against one annotation mask."""
    from locvalid.saliency import threshold_mask

    s = np.asarray(saliency, dtype=np.float64)
    gc = threshold_mask(s, x)
    try:
        auc = loc_auc(s, ann_mask)
    except UndefinedMetricError:
        if not np.any(ann_mask):
            raise
        auc = float("nan")
    return LocalisationScore(
        slice_index=int(slice_index),
        x=float(x),
        la=la(gc, ann_mask),
        fpp=fpp(gc, ann_mask),
        pla=pla(gc, ann_mask),
        iou=iou(gc, ann_mask),
        dice=dice(gc, ann_mask),
        auc=auc,
    )


def key_slice(scores: Sequence[LocalisationScore], metric: str = "pla") -> int:
    """Slice index with the highest ``metric``; ties go to the lowest index.

    ``nan`` values never win.
    """
    if not scores:
        raise EmptyInputError("key_slice received no scores")
    best: Optional[LocalisationScore] = None
    for s in sorted(scores, key=lambda s: s.slice_index):
        v = s.get(metric)
        if np.isnan(v):
            continue
        if best is None or v > best.get(metric):
            best = s
    if best is None:
        raise UndefinedMetricError(f"no slice has a defined {metric}")
    return best.slice_index
