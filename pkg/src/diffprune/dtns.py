"""Raw tensor files ("DTNS").

Layout, little-endian throughout::

    b"DTNS" | u32 version=1 | u32 ndim | u64 dims[ndim] | u8 dtype | payload

dtype code 0 is float32, 1 is float64. Payload is row-major.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

MAGIC = b"DTNS"
VERSION = 1
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(ValueError):
    pass


def write_tensor(fh: BinaryIO, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    dtype = arr.dtype.newbyteorder("<")
    if dtype not in _CODES:
        raise FormatError(f"DTNS stores float32/float64 only, got {arr.dtype}")
    fh.write(MAGIC)
    fh.write(struct.pack("<II", VERSION, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(struct.pack("<B", _CODES[dtype]))
    fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError("truncated DTNS stream")
    return buf


def read_tensor(fh: BinaryIO) -> np.ndarray:
    if _read_exact(fh, 4) != MAGIC:
        raise FormatError("bad DTNS magic")
    version, ndim = struct.unpack("<II", _read_exact(fh, 8))
    if version != VERSION:
        raise FormatError(f"unsupported DTNS version {version}")
    dims = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
    (code,) = struct.unpack("<B", _read_exact(fh, 1))
    if code not in _DTYPES:
        raise FormatError(f"unknown DTNS dtype code {code}")
    dtype = _DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64))
    payload = _read_exact(fh, count * dtype.itemsize)
    return np.frombuffer(payload, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))


def dumps(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_tensor(buf, arr)
    return buf.getvalue()


def loads(blob: bytes) -> np.ndarray:
    return read_tensor(io.BytesIO(blob))


def save(path, arr: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        write_tensor(fh, arr)


def load(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)
