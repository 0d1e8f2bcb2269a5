"""Slice stacks and the fusion strategies that consume them."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from locvalid.exceptions import DimensionError, EmptyStackError

PLANES = ("axial", "coronal", "sagittal")


class FusionStrategy(str, Enum):
    SINGLE = "single"
    MPFUSENET = "mpfusenet"
    MP2 = "mp2"
    MPLR = "mplr"

    @property
    def multi_plane(self) -> bool:
        return self is not FusionStrategy.SINGLE


@dataclass(frozen=True)
class Volume:
    """Ordered stack of 2D slices from one acquisition plane.

    ``slices`` is stored as ``(s, 1, H, W)`` float64; ``(s, H, W)`` input is
    accepted and given a channel axis.
    """

    plane: str
    slices: np.ndarray

    def __post_init__(self):
        if self.plane not in PLANES:
            raise ValueError(f"plane must be one of {PLANES}, got {self.plane!r}")
        arr = np.array(self.slices, dtype=np.float64)
        if arr.ndim == 3:
            arr = arr[:, None]
        if arr.ndim != 4 or arr.shape[1] != 1:
            raise DimensionError(f"volume slices must be (s, H, W) or (s, 1, H, W), got {arr.shape}", axis="ndim")
        if arr.shape[0] == 0:
            raise EmptyStackError(f"{self.plane} volume has no slices")
        if arr.shape[2] < 1 or arr.shape[3] < 1:
            raise DimensionError(f"slices must be at least 1x1, got {arr.shape[2:]}", axis="spatial")
        arr.setflags(write=False)
        object.__setattr__(self, "slices", arr)

    @property
    def n_slices(self) -> int:
        return self.slices.shape[0]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.slices.shape[2], self.slices.shape[3]

    def __len__(self) -> int:
        return self.n_slices
