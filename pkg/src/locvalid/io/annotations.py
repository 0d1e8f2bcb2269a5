"""``.ann.json`` annotation files."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from locvalid.annotations import AnnotationSet, Box
from locvalid.exceptions import AnnotationError

EXTENSION = ".ann.json"


@lru_cache(maxsize=1)
def annotation_schema() -> dict:
    return json.loads(resources.files("locvalid.io").joinpath("annotation.schema.json").read_text())


def annotations_to_dict(ann: AnnotationSet) -> dict:
    return {
        "case_id": ann.case_id,
        "plane": ann.plane,
        "slices": [
            {
                "index": i,
                "boxes": [
                    {"x0": b.x0, "y0": b.y0, "x1": b.x1, "y1": b.y1, "category": b.category}
                    for b in ann.slices[i]
                ],
            }
            for i in sorted(ann.slices)
        ],
    }


def annotations_from_dict(doc: dict, source: str = "<annotations>", shape: Optional[tuple[int, int]] = None) -> AnnotationSet:
    """Validate ``doc`` against the shipped schema and build an AnnotationSet.

    Raises:
        AnnotationError: Naming ``source`` and the offending field.
    """
    try:
        jsonschema.validate(doc, annotation_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise AnnotationError(f"{source}: field {where}: {exc.message}") from None
    ann = AnnotationSet(doc["case_id"], doc["plane"])
    for k, sl in enumerate(doc["slices"]):
        if sl["index"] in ann.slices:
            raise AnnotationError(f"{source}: field slices/{k}/index: duplicate slice {sl['index']}")
        ann.slices[sl["index"]] = []
        for j, b in enumerate(sl["boxes"]):
            try:
                box = Box(b["x0"], b["y0"], b["x1"], b["y1"], b["category"])
                if shape is not None:
                    box.check_bounds(*shape)
            except AnnotationError as exc:
                raise AnnotationError(f"{source}: field slices/{k}/boxes/{j}: {exc}") from None
            ann.slices[sl["index"]].append(box)
    return ann


def save_annotations(path, ann: AnnotationSet) -> None:
    Path(path).write_text(json.dumps(annotations_to_dict(ann), indent=2) + "\n", encoding="utf-8")


def load_annotations(path, shape: Optional[tuple[int, int]] = None) -> AnnotationSet:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return annotations_from_dict(doc, str(path), shape)
