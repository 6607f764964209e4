"""Versioned binary container shared by parameter checkpoints and replay dumps.

Layout (all integers little-endian)::

    magic      8 bytes   b"MBDQNENV"
    version    uint32
    kind       uint32 length + ASCII bytes
    count      uint32    number of arrays
    per array:
        name   uint32 length + ASCII bytes
        ndim   uint32
        shape  ndim x uint64
        data   prod(shape) x float64 ('<f8')

Every array is stored as little-endian float64 regardless of its in-memory
dtype; integer fields round-trip exactly up to 2**53.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MBDQNENV"
VERSION = 1


class EnvelopeError(ValueError):
    pass


def _write_str(fh, text: str):
    raw = text.encode("ascii")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _read_exact(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise EnvelopeError("truncated envelope file")
    return raw


def _read_str(fh) -> str:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, n).decode("ascii")


def write_envelope(path, kind: str, arrays: dict[str, np.ndarray]) -> None:
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        _write_str(fh, kind)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype="<f8")
            _write_str(fh, name)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def read_envelope(path) -> tuple[str, dict[str, np.ndarray]]:
    with open(Path(path), "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise EnvelopeError(f"{path} is not an envelope file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise EnvelopeError(f"unsupported envelope version {version}")
        kind = _read_str(fh)
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        arrays = {}
        for _ in range(count):
            name = _read_str(fh)
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            data = np.frombuffer(_read_exact(fh, 8 * size), dtype="<f8")
            arrays[name] = data.reshape(shape).astype(np.float64)
        if fh.read(1):
            raise EnvelopeError("trailing bytes after envelope payload")
    return kind, arrays
