"""Flat named-array archive for float64 parameters.

Layout (all integers little-endian)::

    magic     8 bytes  b"DDARC001"
    count     uint32   number of entries
    entry*    name_len uint16, name utf-8 bytes,
              ndim uint8, dims uint32 * ndim,
              data float64 * prod(dims), row-major
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Dict, Mapping, Union

import numpy as np

MAGIC = b"DDARC001"


def dumps(arrays: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def _read(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ValueError("truncated parameter archive")
    return data


def loads(data: bytes) -> Dict[str, np.ndarray]:
    f = io.BytesIO(data)
    if _read(f, len(MAGIC)) != MAGIC:
        raise ValueError("not a parameter archive (bad magic)")
    (count,) = struct.unpack("<I", _read(f, 4))
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read(f, 2))
        name = _read(f, nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", _read(f, 1))
        shape = struct.unpack(f"<{ndim}I", _read(f, 4 * ndim))
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(_read(f, 8 * size), dtype="<f8").reshape(shape)
        out[name] = arr.astype(np.float64)
    if f.read(1):
        raise ValueError("trailing bytes after parameter archive")
    return out


def save(path: Union[str, Path], arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(arrays))


def load(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
