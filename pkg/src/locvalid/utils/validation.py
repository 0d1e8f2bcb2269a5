"""Input validation helpers shared by estimators and metrics."""

from __future__ import annotations

from collections.abc import Mapping, Sequence

import numpy as np

from locvalid.exceptions import DegenerateFitError, DimensionError, EmptyInputError
from locvalid.volume import PLANES, Volume


def check_case(case, planes: Sequence[str]) -> dict[str, Volume]:
    """Normalise one MRI case to ``{plane: Volume}`` for the requested planes.

    A case may be a single :class:`Volume`, an ``(s, H, W)`` array (only when
    one plane is requested), a mapping keyed by plane name, or a 3-tuple in
    axial/coronal/sagittal order.
    """
    if isinstance(case, Volume):
        by_plane = {case.plane: case}
    elif isinstance(case, Mapping):
        by_plane = {p: v if isinstance(v, Volume) else Volume(p, v) for p, v in case.items()}
    elif isinstance(case, np.ndarray):
        if len(planes) != 1:
            raise DimensionError("a bare array can only feed a single-plane model", axis="plane")
        by_plane = {planes[0]: Volume(planes[0], case)}
    elif isinstance(case, (tuple, list)) and len(case) == 3:
        by_plane = {}
        for p, v in zip(PLANES, case):
            if isinstance(v, Volume) and v.plane != p:
                raise ValueError(f"tuple cases are axial/coronal/sagittal ordered; got {v.plane} in {p} slot")
            by_plane[p] = v if isinstance(v, Volume) else Volume(p, v)
    else:
        raise TypeError(f"cannot interpret case of type {type(case).__name__}")
    missing = [p for p in planes if p not in by_plane]
    if missing:
        raise DimensionError(f"case is missing plane(s) {missing}", axis="plane")
    return {p: by_plane[p] for p in planes}


def check_cases(X, planes: Sequence[str]) -> list[dict[str, Volume]]:
    if isinstance(X, (Volume, Mapping)):
        raise TypeError("X must be a sequence of cases, not a single case")
    cases = [check_case(c, planes) for c in X]
    if not cases:
        raise EmptyInputError("no cases given")
    return cases


def check_binary_labels(y, n: int | None = None, require_both: bool = True) -> np.ndarray:
    """Validate a 0/1 label vector and return it as int array."""
    y = np.asarray(y)
    if y.ndim != 1:
        raise DimensionError(f"labels must be 1-D, got shape {y.shape}", axis="labels")
    if n is not None and y.shape[0] != n:
        raise DimensionError(f"expected {n} labels, got {y.shape[0]}", axis="labels")
    if y.size == 0:
        raise EmptyInputError("no labels given")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    y = y.astype(np.int64)
    if require_both and np.unique(y).size < 2:
        raise DegenerateFitError(f"labels contain a single class ({int(y[0])})")
    return y


def check_mask(m, name: str = "mask") -> np.ndarray:
    """Return ``m`` as a boolean array with at least two dimensions."""
    arr = np.asarray(m)
    if arr.ndim < 2:
        raise DimensionError(f"{name} must be at least 2-D, got shape {arr.shape}", axis=name)
    if arr.dtype != bool:
        if not np.all((arr == 0) | (arr == 1)):
            raise ValueError(f"{name} must be binary")
        arr = arr.astype(bool)
    return arr


def check_mask_pair(gc, ann) -> tuple[np.ndarray, np.ndarray]:
    gc, ann = check_mask(gc, "gc"), check_mask(ann, "ann")
    if gc.shape[-2:] != ann.shape[-2:]:
        raise DimensionError(f"mask shapes {gc.shape[-2:]} and {ann.shape[-2:]} differ", axis="spatial")
    return gc, ann


def check_saliency(s, name: str = "saliency") -> np.ndarray:
    """Validate a saliency map: finite float values within [0, 1]."""
    arr = np.asarray(s, dtype=np.float64)
    if arr.ndim < 2:
        raise DimensionError(f"{name} must be at least 2-D, got shape {arr.shape}", axis=name)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr
