"""Portable ``.sgrd`` grid files.

Layout (all little-endian)::

    b"SGRD1" | rank: u32 | dims: rank * u32 | payload: prod(dims) * f32, row-major

Values are held as float64 in memory and stored as float32 on disk.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from locvalid.exceptions import GridFormatError
from locvalid.tensor import Tensor

MAGIC = b"SGRD1"
EXTENSION = ".sgrd"
MAX_PAYLOAD_BYTES = 1 << 30
MAX_RANK = 32
_U32 = struct.Struct("<I")


def _checked_count(dims, offset: int) -> int:
    count = 1
    for d in dims:
        count *= int(d)
        if count * 4 > MAX_PAYLOAD_BYTES:
            raise GridFormatError(
                f"grid dims {list(dims)} exceed the {MAX_PAYLOAD_BYTES} byte payload limit", offset
            )
    return count


def save_grid(t) -> bytes:
    """Encode a tensor or array as grid-file bytes."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
    if arr.ndim > MAX_RANK:
        raise GridFormatError(f"rank {arr.ndim} exceeds {MAX_RANK}")
    for d in arr.shape:
        if d >= 1 << 32:
            raise GridFormatError(f"dimension {d} does not fit in u32")
    _checked_count(arr.shape, len(MAGIC) + 4)
    header = MAGIC + _U32.pack(arr.ndim) + b"".join(_U32.pack(d) for d in arr.shape)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def load_grid(buf: bytes) -> np.ndarray:
    """Decode grid-file bytes into a float64 array.

    Raises:
        GridFormatError: On a bad magic, truncated header or payload, oversize
            dims, or trailing bytes. The message carries the byte offset.
    """
    buf = bytes(buf)
    if buf[: len(MAGIC)] != MAGIC:
        raise GridFormatError(f"bad magic {buf[:len(MAGIC)]!r}, expected {MAGIC!r}", 0)
    pos = len(MAGIC)
    if len(buf) < pos + 4:
        raise GridFormatError("truncated header: missing rank", pos)
    (rank,) = _U32.unpack_from(buf, pos)
    if rank > MAX_RANK:
        raise GridFormatError(f"rank {rank} exceeds {MAX_RANK}", pos)
    pos += 4
    if len(buf) < pos + 4 * rank:
        raise GridFormatError(f"truncated header: expected {rank} dims", pos)
    dims = struct.unpack_from(f"<{rank}I", buf, pos)
    count = _checked_count(dims, pos)
    pos += 4 * rank
    need = pos + 4 * count
    if len(buf) < need:
        raise GridFormatError(f"truncated payload: expected {4 * count} bytes, found {len(buf) - pos}", len(buf))
    if len(buf) > need:
        raise GridFormatError(f"{len(buf) - need} trailing bytes after payload", need)
    return np.frombuffer(buf, dtype="<f4", count=count, offset=pos).astype(np.float64).reshape(dims)


def write_grid(path, t) -> None:
    Path(path).write_bytes(save_grid(t))


def read_grid(path) -> np.ndarray:
    try:
        return load_grid(Path(path).read_bytes())
    except GridFormatError as exc:
        err = GridFormatError(f"{path}: {exc}")
        err.offset = exc.offset
        raise err from None
