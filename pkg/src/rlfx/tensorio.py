"""PRTH binary tensor format.

Layout (little endian)::

    b"PRTH" | version: uint32 | rank: uint32 | dims: uint64[rank] | float32 data

Data is row-major. Several tensors may be concatenated in one stream; the
checkpoint format relies on that.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import LoadError

MAGIC = b"PRTH"
VERSION = 1


def write_tensor_stream(fh: BinaryIO, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype="<f4")
    fh.write(MAGIC)
    fh.write(struct.pack("<II", VERSION, arr.ndim))
    if arr.ndim:
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def read_tensor_stream(fh: BinaryIO) -> np.ndarray:
    magic = fh.read(4)
    if magic != MAGIC:
        raise LoadError(f"bad tensor magic {magic!r}, expected {MAGIC!r}")
    header = fh.read(8)
    if len(header) != 8:
        raise LoadError("truncated tensor header")
    version, rank = struct.unpack("<II", header)
    if version != VERSION:
        raise LoadError(f"unsupported tensor version {version}")
    dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    raw = fh.read(4 * count)
    if len(raw) != 4 * count:
        raise LoadError(f"truncated tensor payload: expected {4 * count} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tensor_stream(fh, array)


def read_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor_stream(fh)


def tensor_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor_stream(buf, array)
    return buf.getvalue()
