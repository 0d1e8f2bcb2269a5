"""Single-file model checkpoints.

Layout::

    b"SCKP1" | header_len: u32 LE | header: UTF-8 JSON | grid blobs

The header holds the estimator parameters, the fused-LR weights for MPLR,
and ``{"name", "offset", "length"}`` of each parameter's ``.sgrd`` blob,
with offsets counted from the end of the header.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from locvalid.exceptions import GridFormatError
from locvalid.io.grid import load_grid, save_grid
from locvalid.models.estimators import LogisticFusion, MultiViewAttentionClassifier

MAGIC = b"SCKP1"
FORMAT_VERSION = 1


def _named_tensors(clf: MultiViewAttentionClassifier) -> dict[str, np.ndarray]:
    if clf.plane_models_ is not None:
        return {f"{p}:{k}": v for p, net in clf.plane_models_.items() for k, v in net.get_state().items()}
    return clf.network_.get_state()


def checkpoint_bytes(clf: MultiViewAttentionClassifier) -> bytes:
    tensors = _named_tensors(clf)
    blobs, index, offset = [], [], 0
    for name in sorted(tensors):
        blob = save_grid(tensors[name])
        index.append({"name": name, "offset": offset, "length": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    params = clf.get_params()
    params["channels"], params["strides"] = list(params["channels"]), list(params["strides"])
    header = {"format_version": FORMAT_VERSION, "estimator": params, "tensors": index}
    if clf.fusion_ is not None:
        header["fusion"] = {"coef": clf.fusion_.coef_.tolist(), "intercept": clf.fusion_.intercept_, "n_iter": clf.fusion_.n_iter_}
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(hb)) + hb + b"".join(blobs)


def save_checkpoint(path, clf: MultiViewAttentionClassifier) -> None:
    Path(path).write_bytes(checkpoint_bytes(clf))


def load_checkpoint(path) -> MultiViewAttentionClassifier:
    """Rebuild a fitted classifier. Parameters come back at float32 precision."""
    buf = Path(path).read_bytes()
    if buf[:5] != MAGIC:
        raise GridFormatError(f"{path}: not a checkpoint (bad magic)", 0)
    if len(buf) < 9:
        raise GridFormatError(f"{path}: truncated header", 5)
    (hlen,) = struct.unpack_from("<I", buf, 5)
    try:
        header = json.loads(buf[9:9 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise GridFormatError(f"{path}: unreadable header", 9) from None
    base = 9 + hlen
    params = dict(header["estimator"])
    params["channels"], params["strides"] = tuple(params["channels"]), tuple(params["strides"])
    clf = MultiViewAttentionClassifier(**params).init_networks()
    tensors = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        try:
            tensors[entry["name"]] = load_grid(buf[start:start + entry["length"]])
        except GridFormatError as exc:
            raise GridFormatError(f"{path}: tensor {entry['name']}: {exc}", start) from None
    if clf.plane_models_ is not None:
        for p, net in clf.plane_models_.items():
            net.set_state({k.split(":", 1)[1]: v for k, v in tensors.items() if k.startswith(f"{p}:")})
        fusion = header.get("fusion")
        if fusion is None:
            raise GridFormatError(f"{path}: MPLR checkpoint without fusion weights")
        lf = LogisticFusion()
        lf.coef_ = np.asarray(fusion["coef"], dtype=np.float64)
        lf.intercept_ = float(fusion["intercept"])
        lf.n_iter_ = int(fusion["n_iter"])
        lf.classes_ = np.array([0, 1])
        lf.n_features_in_ = lf.coef_.shape[0]
        clf.fusion_ = lf
    else:
        clf.network_.set_state(tensors)
        clf.fusion_ = None
    return clf
