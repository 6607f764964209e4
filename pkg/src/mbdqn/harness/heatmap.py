"""Visitation maps and their CSV / 16-bit PGM renderings."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAXVAL = 65535


@dataclass
class VisitationMap:
    counts: np.ndarray  # (height, width) non-negative integers

    @classmethod
    def empty(cls, width: int, height: int) -> "VisitationMap":
        return cls(np.zeros((height, width), dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def unique(self) -> int:
        return int(np.count_nonzero(self.counts))


def scale_counts(counts: np.ndarray) -> np.ndarray:
    """Linear map of counts onto ``0..65535`` with the maximum at full intensity."""
    counts = np.asarray(counts, dtype=np.int64)
    peak = counts.max(initial=0)
    if peak == 0:
        return np.zeros(counts.shape, dtype=np.uint16)
    return np.rint(counts * (MAXVAL / peak)).astype(np.uint16)


def write_pgm(path, pixels: np.ndarray) -> None:
    pixels = np.asarray(pixels, dtype=np.uint16)
    height, width = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n{MAXVAL}\n".encode("ascii"))
        fh.write(pixels.astype(">u2").tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    header = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
    if header is None:
        raise ValueError(f"{path} is not a binary PGM")
    width, height, maxval = (int(g) for g in header.groups())
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.frombuffer(raw, dtype=dtype, count=width * height, offset=header.end())
    return data.reshape(height, width).astype(np.int64)


def write_counts_csv(path, counts: np.ndarray) -> None:
    rows = [",".join(str(int(c)) for c in row) for row in np.asarray(counts)]
    Path(path).write_text("\n".join(rows) + "\n")


def read_counts_csv(path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    return np.array([[int(c) for c in ln.split(",")] for ln in lines], dtype=np.int64)


def export_heatmap(vmap: VisitationMap | np.ndarray, path) -> tuple[Path, Path]:
    """Write ``<path>.csv`` (raw counts) and ``<path>.pgm`` (P5, 16-bit). Returns both paths."""
    counts = vmap.counts if isinstance(vmap, VisitationMap) else np.asarray(vmap)
    stem = Path(path)
    if stem.suffix in (".csv", ".pgm"):
        stem = stem.with_suffix("")
    csv_path, pgm_path = stem.with_suffix(".csv"), stem.with_suffix(".pgm")
    write_counts_csv(csv_path, counts)
    write_pgm(pgm_path, scale_counts(counts))
    return csv_path, pgm_path
