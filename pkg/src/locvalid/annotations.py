"""Bounding-box annotations and their rasterisation to binary masks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from locvalid.exceptions import AnnotationError


@dataclass(frozen=True)
class Box:
    """Inclusive pixel box; ``x`` is the column, ``y`` the row, origin top-left."""

    x0: int
    y0: int
    x1: int
    y1: int
    category: str

    def __post_init__(self):
        for k in ("x0", "y0", "x1", "y1"):
            v = getattr(self, k)
            if isinstance(v, bool) or int(v) != v:
                raise AnnotationError(f"box coordinate {k}={v!r} is not an integer")
            object.__setattr__(self, k, int(v))
        if not isinstance(self.category, str) or not self.category:
            raise AnnotationError("box category must be a non-empty string")
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise AnnotationError(f"box {self.as_tuple()} has x0 > x1 or y0 > y1")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return self.x0, self.y0, self.x1, self.y1

    @property
    def area(self) -> int:
        return (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)

    def contains(self, row: int, col: int) -> bool:
        return self.y0 <= row <= self.y1 and self.x0 <= col <= self.x1

    def check_bounds(self, height: int, width: int) -> None:
        if self.x0 < 0 or self.y0 < 0 or self.x1 >= width or self.y1 >= height:
            raise AnnotationError(f"box {self.as_tuple()} ({self.category}) outside a {height}x{width} slice")


@dataclass
class AnnotationSet:
    """Boxes per slice index for one plane of one case."""

    case_id: str
    plane: str
    slices: dict[int, list[Box]] = field(default_factory=dict)

    def boxes(self, slice_index: int, category: Optional[Union[str, Iterable[str]]] = None) -> list[Box]:
        boxes = self.slices.get(slice_index, [])
        if category is None:
            return list(boxes)
        cats = {category} if isinstance(category, str) else set(category)
        return [b for b in boxes if b.category in cats]

    def annotated_slices(self, category=None) -> list[int]:
        return sorted(i for i in self.slices if self.boxes(i, category))

    def categories(self) -> list[str]:
        return sorted({b.category for boxes in self.slices.values() for b in boxes})

    def add(self, slice_index: int, box: Box) -> None:
        self.slices.setdefault(int(slice_index), []).append(box)


def rasterize(ann: AnnotationSet, slice_index: int, height: int, width: int, category=None) -> np.ndarray:
    """Union of the matching boxes on one slice as a ``(height, width)`` bool mask.

    Raises:
        AnnotationError: If any box on the slice lies outside the image.
    """
    mask = np.zeros((height, width), dtype=bool)
    for b in ann.boxes(slice_index):
        b.check_bounds(height, width)
    for b in ann.boxes(slice_index, category):
        mask[b.y0:b.y1 + 1, b.x0:b.x1 + 1] = True
    return mask
