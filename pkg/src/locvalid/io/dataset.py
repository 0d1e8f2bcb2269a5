"""On-disk dataset layout.

::

    DIR/labels.csv                      case_id,label
    DIR/<case_id>/<plane>.sgrd          (s, H, W) slice stack
    DIR/<case_id>/<plane>.ann.json      boxes for that plane
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from locvalid.annotations import AnnotationSet
from locvalid.exceptions import LocvalidError
from locvalid.io.annotations import EXTENSION as ANN_EXT
from locvalid.io.annotations import load_annotations, save_annotations
from locvalid.io.grid import EXTENSION as GRID_EXT
from locvalid.io.grid import read_grid, write_grid
from locvalid.volume import PLANES, Volume

LABELS_FILE = "labels.csv"


class DatasetError(LocvalidError, ValueError):
    """Raised when a dataset directory is incomplete or inconsistent."""


@dataclass
class CaseRecord:
    case_id: str
    volumes: dict[str, Volume]
    annotations: dict[str, AnnotationSet]
    label: int | None = None


def write_case(case_dir, volumes: dict[str, Volume], annotations: dict[str, AnnotationSet]) -> None:
    case_dir = Path(case_dir)
    case_dir.mkdir(parents=True, exist_ok=True)
    for plane, vol in volumes.items():
        write_grid(case_dir / f"{plane}{GRID_EXT}", vol.slices[:, 0])
    for plane, ann in annotations.items():
        save_annotations(case_dir / f"{plane}{ANN_EXT}", ann)


def write_dataset(out_dir, cases: Iterable) -> list[Path]:
    """Write synthetic cases; returns the written file paths (sorted)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for c in cases:
        write_case(out_dir / c.case_id, c.volumes, c.annotations)
        rows.append((c.case_id, c.label))
    with open(out_dir / LABELS_FILE, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "label"])
        w.writerows(sorted(rows))
    return sorted(p for p in out_dir.rglob("*") if p.is_file())


def read_case(case_dir, planes=PLANES) -> CaseRecord:
    """Load the requested planes (volumes and any annotation files) of one case."""
    case_dir = Path(case_dir)
    if not case_dir.is_dir():
        raise DatasetError(f"{case_dir}: case directory not found")
    volumes, annotations = {}, {}
    for plane in planes:
        grid = case_dir / f"{plane}{GRID_EXT}"
        if not grid.exists():
            raise DatasetError(f"{grid}: missing {plane} volume")
        arr = read_grid(grid)
        if arr.ndim != 3:
            raise DatasetError(f"{grid}: field dims: expected (s, H, W), got {arr.shape}")
        volumes[plane] = Volume(plane, arr)
        ann = case_dir / f"{plane}{ANN_EXT}"
        if ann.exists():
            annotations[plane] = load_annotations(ann, volumes[plane].image_shape)
    return CaseRecord(case_dir.name, volumes, annotations)


def read_labels(data_dir) -> dict[str, int]:
    path = Path(data_dir) / LABELS_FILE
    if not path.exists():
        raise DatasetError(f"{path}: labels file not found")
    labels = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"case_id", "label"} <= set(reader.fieldnames):
            raise DatasetError(f"{path}: header must contain case_id,label")
        for k, row in enumerate(reader, start=2):
            if row["label"] not in ("0", "1"):
                raise DatasetError(f"{path}: line {k}: field label must be 0 or 1, got {row['label']!r}")
            labels[row["case_id"]] = int(row["label"])
    return labels


def read_dataset(data_dir, planes=PLANES) -> list[CaseRecord]:
    """All labelled cases, sorted by case id."""
    data_dir = Path(data_dir)
    out = []
    for case_id, label in sorted(read_labels(data_dir).items()):
        rec = read_case(data_dir / case_id, planes)
        rec.label = label
        out.append(rec)
    return out
