"""Synthetic three-plane volumes with planted lesions and known boxes.

Negatives are Gaussian noise. Positives additionally carry one bright
Gaussian blob per plane on a contiguous run of slices; its box
``centre +/- radius`` is recorded as an ``acl_tear`` annotation. The blob's
standard deviation is ``blob_sigma_ratio * radius``, so by default the box
spans the blob's one-sigma core. The blob centre always sits at least one
radius from every border.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from locvalid.annotations import AnnotationSet, Box
from locvalid.volume import PLANES, Volume

LESION_CATEGORY = "acl_tear"


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_cases: int = 200
    slices_per_plane: tuple[int, int] = (16, 16)
    height: int = 64
    width: int = 64
    radius_range: tuple[int, int] = (5, 8)
    lesion_run: tuple[int, int] = (3, 6)
    lesion_delta: float = 1.5
    blob_sigma_ratio: float = 1.0
    noise_sigma: float = 0.5
    positive_fraction: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "slices_per_plane", tuple(int(v) for v in self.slices_per_plane))
        object.__setattr__(self, "radius_range", tuple(int(v) for v in self.radius_range))
        object.__setattr__(self, "lesion_run", tuple(int(v) for v in self.lesion_run))
        if self.n_cases < 1:
            raise ValueError("n_cases must be >= 1")
        if not 0.0 < self.positive_fraction < 1.0:
            raise ValueError("positive_fraction must lie in (0, 1)")
        lo, hi = self.slices_per_plane
        if not 1 <= lo <= hi:
            raise ValueError("slices_per_plane must be 1 <= min <= max")
        rlo, rhi = self.radius_range
        if not 1 <= rlo <= rhi or 2 * rhi >= min(self.height, self.width):
            raise ValueError("radius_range must be 1 <= min <= max < min(height, width) / 2")
        llo, lhi = self.lesion_run
        if not 1 <= llo <= lhi:
            raise ValueError("lesion_run must be 1 <= min <= max")
        if self.noise_sigma < 0 or self.blob_sigma_ratio <= 0:
            raise ValueError("noise_sigma must be >= 0 and blob_sigma_ratio > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("slices_per_plane", "radius_range", "lesion_run"):
            d[k] = list(d[k])
        return d


@dataclass(frozen=True)
class Lesion:
    row: int
    col: int
    radius: int
    first_slice: int
    last_slice: int

    @property
    def box(self) -> tuple[int, int, int, int]:
        """``(x0, y0, x1, y1)`` inclusive."""
        r = self.radius
        return self.col - r, self.row - r, self.col + r, self.row + r


@dataclass
class SyntheticCase:
    case_id: str
    label: int
    volumes: dict[str, Volume]
    annotations: dict[str, AnnotationSet]
    lesions: dict[str, Optional[Lesion]] = field(default_factory=dict)


def _blob(cfg: SynthConfig, row: int, col: int, radius: int) -> np.ndarray:
    sigma = cfg.blob_sigma_ratio * radius
    rr, cc = np.mgrid[0:cfg.height, 0:cfg.width]
    return cfg.lesion_delta * np.exp(-((rr - row) ** 2 + (cc - col) ** 2) / (2.0 * sigma * sigma))


def generate_synthetic(cfg: SynthConfig) -> list[SyntheticCase]:
    """Deterministic dataset for ``cfg``; exactly ``round(n * positive_fraction)`` positives."""
    rng = np.random.default_rng(cfg.seed)
    n_pos = int(round(cfg.n_cases * cfg.positive_fraction))
    labels = rng.permutation(np.r_[np.ones(n_pos, dtype=int), np.zeros(cfg.n_cases - n_pos, dtype=int)])
    width = max(4, len(str(cfg.n_cases - 1)))
    cases = []
    for i, label in enumerate(labels):
        case_id = f"case_{i:0{width}d}"
        volumes, annotations, lesions = {}, {}, {}
        for plane in PLANES:
            s = int(rng.integers(cfg.slices_per_plane[0], cfg.slices_per_plane[1] + 1))
            slices = rng.normal(0.0, cfg.noise_sigma, (s, cfg.height, cfg.width))
            ann = AnnotationSet(case_id, plane)
            lesion = None
            if label == 1:
                r = int(rng.integers(cfg.radius_range[0], cfg.radius_range[1] + 1))
                row = int(rng.integers(r, cfg.height - r))
                col = int(rng.integers(r, cfg.width - r))
                run = int(rng.integers(min(cfg.lesion_run[0], s), min(cfg.lesion_run[1], s) + 1))
                first = int(rng.integers(0, s - run + 1))
                lesion = Lesion(row, col, r, first, first + run - 1)
                slices[first:first + run] += _blob(cfg, row, col, r)
                x0, y0, x1, y1 = lesion.box
                for k in range(first, first + run):
                    ann.add(k, Box(x0, y0, x1, y1, LESION_CATEGORY))
            volumes[plane] = Volume(plane, slices)
            annotations[plane] = ann
            lesions[plane] = lesion
        cases.append(SyntheticCase(case_id, int(label), volumes, annotations, lesions))
    return cases
