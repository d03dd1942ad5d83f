"""Binary grid files: 24-byte little-endian header then float64 data, row-major.

Header layout is an 8-byte magic, then rows and cols as unsigned 64-bit
integers. Real grids use ``SGRGRID1``. Complex grids use ``SGRCPLX1`` with one
header followed by the real plane and then the imaginary plane.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

__all__ = ["GridFormatError", "write_grid", "read_grid", "MAGIC_REAL", "MAGIC_COMPLEX"]

MAGIC_REAL = b"SGRGRID1"
MAGIC_COMPLEX = b"SGRCPLX1"
_HEADER = struct.Struct("<8sQQ")
_F64 = np.dtype("<f8")


class GridFormatError(ValueError):
    pass


def write_grid(path, grid: np.ndarray) -> None:
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError(f"expected a 2D grid, got shape {grid.shape}")
    rows, cols = grid.shape
    if np.iscomplexobj(grid):
        header = _HEADER.pack(MAGIC_COMPLEX, rows, cols)
        body = grid.real.astype(_F64).tobytes() + grid.imag.astype(_F64).tobytes()
    else:
        header = _HEADER.pack(MAGIC_REAL, rows, cols)
        body = grid.astype(_F64).tobytes()
    Path(path).write_bytes(header + body)


def read_grid(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise GridFormatError(f"{path}: file shorter than the header")
    magic, rows, cols = _HEADER.unpack_from(data)
    if magic not in (MAGIC_REAL, MAGIC_COMPLEX):
        raise GridFormatError(f"{path}: bad magic {magic!r}")
    planes = 2 if magic == MAGIC_COMPLEX else 1
    n = rows * cols
    if len(data) != _HEADER.size + 8 * n * planes:
        raise GridFormatError(f"{path}: expected {n * planes} values for a {rows}x{cols} grid")
    values = np.frombuffer(data, dtype=_F64, offset=_HEADER.size).astype(float)
    if planes == 1:
        return values.reshape(rows, cols)
    # assign the planes directly; re + 1j * im would not preserve signed zeros or infinities
    out = np.empty(n, dtype=np.complex128)
    out.real, out.imag = values[:n], values[n:]
    return out.reshape(rows, cols)
