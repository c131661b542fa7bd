"""Tiny binary container for float64 matrices (codebooks, embeddings)."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import IoError

MATRIX_MAGIC = b"CSFMAT1"


def write_matrix(path: str | Path, m: np.ndarray) -> None:
    """Write a 2-D float64 matrix: magic, rows, cols (int32), row-major data."""
    a = np.ascontiguousarray(np.asarray(m, dtype=np.float64))
    if a.ndim != 2:
        raise IoError(f"matrix must be 2-D, got shape {a.shape}")
    try:
        with open(path, "wb") as f:
            f.write(MATRIX_MAGIC)
            f.write(struct.pack("<ii", a.shape[0], a.shape[1]))
            f.write(a.tobytes())
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_matrix(path: str | Path) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if not blob.startswith(MATRIX_MAGIC):
        raise IoError(f"{path}: bad magic, not a matrix file")
    off = len(MATRIX_MAGIC)
    rows, cols = struct.unpack_from("<ii", blob, off)
    off += 8
    if rows < 0 or cols < 0:
        raise IoError(f"{path}: invalid shape {rows}x{cols}")
    data = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=off)
    return data.reshape(rows, cols).copy()
