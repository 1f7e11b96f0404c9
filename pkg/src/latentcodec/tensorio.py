"""On-disk containers: the ``LCT1`` tensor file and the ``rate,quality`` curve CSV.

Tensor layout (all little-endian)::

    b"LCT1" | rank:u32 | dims: rank x u32 | data: prod(dims) x f32, row-major
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError

TENSOR_MAGIC = b"LCT1"
_U32 = struct.Struct("<I")


def tensor_to_bytes(tensor) -> bytes:
    arr = np.asarray(tensor)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.size == 0:
        raise FormatError("empty tensor")
    data = np.ascontiguousarray(arr, dtype="<f4")
    header = TENSOR_MAGIC + _U32.pack(arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + data.tobytes()


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 4 or buf[:4] != TENSOR_MAGIC:
        raise FormatError(f"bad magic: expected {TENSOR_MAGIC!r}, got {bytes(buf[:4])!r}")
    if len(buf) < 8:
        raise FormatError("short header: missing rank")
    (rank,) = _U32.unpack_from(buf, 4)
    if rank < 1:
        raise FormatError(f"bad rank: {rank}")
    end_dims = 8 + 4 * rank
    if len(buf) < end_dims:
        raise FormatError(f"short header: rank {rank} needs {rank} dims")
    dims = struct.unpack_from(f"<{rank}I", buf, 8)
    if any(d < 1 for d in dims):
        raise FormatError(f"bad dims: {list(dims)}")
    count = int(np.prod(dims, dtype=np.int64))
    payload = len(buf) - end_dims
    if payload < 4 * count:
        raise FormatError(f"short data: expected {4 * count} bytes, got {payload}")
    if payload > 4 * count:
        raise FormatError(f"trailing data: {payload - 4 * count} extra bytes")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=end_dims)
    return data.astype(np.float32).reshape(dims)


def read_tensor(path) -> np.ndarray:
    """Read a tensor file into a float32 array of the declared shape."""
    with open(path, "rb") as fh:
        buf = fh.read()
    try:
        return tensor_from_bytes(buf)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_tensor(tensor, path) -> None:
    buf = tensor_to_bytes(tensor)
    with open(path, "wb") as fh:
        fh.write(buf)


# --- curves -----------------------------------------------------------------

def curve_to_text(rate, quality) -> str:
    rate = np.asarray(rate, dtype=np.float64)
    quality = np.asarray(quality, dtype=np.float64)
    if rate.shape != quality.shape or rate.ndim != 1:
        raise FormatError("rate and quality must be 1-d sequences of equal length")
    order = np.argsort(rate, kind="stable")
    rate, quality = rate[order], quality[order]
    if np.any(np.diff(rate) <= 0):
        raise FormatError("rate column must be strictly increasing")
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["rate", "quality"])
    for r, q in zip(rate, quality):
        writer.writerow([repr(float(r)), repr(float(q))])
    return out.getvalue()


def read_curve(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a ``rate,quality`` CSV. Returns ``(rate, quality)`` float arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["rate", "quality"]:
        raise FormatError(f"{path}: header must be 'rate,quality'")
    rate, quality = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise FormatError(f"{path}:{lineno}: expected 2 columns")
        try:
            rate.append(float(row[0]))
            quality.append(float(row[1]))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric value") from None
    rate = np.array(rate)
    if np.any(np.diff(rate) <= 0):
        raise FormatError(f"{path}: rate column must be strictly increasing")
    return rate, np.array(quality)


def write_curve(rate, quality, path) -> None:
    Path(path).write_text(curve_to_text(rate, quality))


def write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        print(text, end="")
        return
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)
