"""Bit-exact little-endian file formats plus grayscale slice rendering.

Formats (all integers little-endian, floats IEEE f64 little-endian):

``.eimg``   magic ``EIMG`` | u8 ndim | u32 dims per axis (nx, ny[, nz]) |
            one u8 (0/1) per full-grid cell in scan order (x fastest,
            then y, then z) | f64 per in-region cell in the same order.
``.f64mat`` magic ``F64M`` | u32 rows | u32 cols | rows*cols f64, row-major.
``.f64vec`` magic ``F64V`` | u32 length | f64 values.
``.mlpk``   magic ``MLPK`` | u32 g, h, n | f64 blocks w1 (h*g), b1 (h),
            w2 (n*h), b2 (n).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .grid import ImageField, RegionMask, embed
from .mlp import MlpParams

__all__ = [
    "FormatError",
    "write_eimg",
    "read_eimg",
    "write_f64mat",
    "read_f64mat",
    "write_f64vec",
    "read_f64vec",
    "write_mlpk",
    "read_mlpk",
    "render_slice",
    "threshold_voxels",
]


class FormatError(Exception):
    """Malformed or truncated container file."""


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise FormatError(f"truncated file while reading {what}")
    return data


def _check_magic(fh, magic: bytes) -> None:
    got = fh.read(len(magic))
    if got != magic:
        raise FormatError(f"bad magic: expected {magic!r}, got {got!r}")


def write_eimg(path, field: ImageField) -> None:
    mask = field.mask
    dims = mask.shape[::-1]  # stored as (nx, ny[, nz])
    with open(path, "wb") as fh:
        fh.write(b"EIMG")
        fh.write(struct.pack("<B", mask.ndim))
        fh.write(struct.pack(f"<{mask.ndim}I", *dims))
        fh.write(mask.inside.astype("<u1").tobytes(order="C"))
        fh.write(field.values.astype("<f8").tobytes())


def read_eimg(path) -> ImageField:
    with open(path, "rb") as fh:
        _check_magic(fh, b"EIMG")
        (ndim,) = struct.unpack("<B", _read_exact(fh, 1, "ndim"))
        if ndim not in (2, 3):
            raise FormatError(f"unsupported ndim {ndim}")
        dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, "dims"))
        shape = dims[::-1]  # back to (nz, ny, nx) array order
        n_cells = int(np.prod(shape))
        raw = np.frombuffer(_read_exact(fh, n_cells, "mask bytes"), dtype="<u1")
        if not np.all((raw == 0) | (raw == 1)):
            raise FormatError("mask bytes must be 0 or 1")
        mask = RegionMask(raw.reshape(shape).astype(bool))
        data = _read_exact(fh, 8 * mask.n_inside, "cell data")
        trailing = fh.read(1)
    if trailing:
        raise FormatError("trailing bytes after cell data")
    values = np.frombuffer(data, dtype="<f8").astype(np.float64)
    return ImageField(mask, values)


def write_f64mat(path, matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError("matrix must be 2D")
    with open(path, "wb") as fh:
        fh.write(b"F64M")
        fh.write(struct.pack("<II", matrix.shape[0], matrix.shape[1]))
        fh.write(np.ascontiguousarray(matrix).astype("<f8").tobytes())


def read_f64mat(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _check_magic(fh, b"F64M")
        rows, cols = struct.unpack("<II", _read_exact(fh, 8, "shape"))
        data = _read_exact(fh, 8 * rows * cols, "matrix data")
        trailing = fh.read(1)
    if trailing:
        raise FormatError("trailing bytes after matrix data")
    return np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(rows, cols)


def write_f64vec(path, vector: np.ndarray) -> None:
    vector = np.asarray(vector, dtype=np.float64)
    if vector.ndim != 1:
        raise ValueError("vector must be 1D")
    with open(path, "wb") as fh:
        fh.write(b"F64V")
        fh.write(struct.pack("<I", vector.size))
        fh.write(vector.astype("<f8").tobytes())


def read_f64vec(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _check_magic(fh, b"F64V")
        (length,) = struct.unpack("<I", _read_exact(fh, 4, "length"))
        data = _read_exact(fh, 8 * length, "vector data")
        trailing = fh.read(1)
    if trailing:
        raise FormatError("trailing bytes after vector data")
    return np.frombuffer(data, dtype="<f8").astype(np.float64)


def write_mlpk(path, params: MlpParams) -> None:
    with open(path, "wb") as fh:
        fh.write(b"MLPK")
        fh.write(struct.pack("<III", params.g, params.h, params.n))
        for block in (params.w1, params.b1, params.w2, params.b2):
            fh.write(np.ascontiguousarray(block).astype("<f8").tobytes())


def read_mlpk(path) -> MlpParams:
    with open(path, "rb") as fh:
        _check_magic(fh, b"MLPK")
        g, h, n = struct.unpack("<III", _read_exact(fh, 12, "layer sizes"))
        if min(g, h, n) < 1:
            raise FormatError("layer sizes must be positive")
        blocks = []
        for name, count, shape in (
            ("w1", h * g, (h, g)),
            ("b1", h, (h,)),
            ("w2", n * h, (n, h)),
            ("b2", n, (n,)),
        ):
            raw = _read_exact(fh, 8 * count, name)
            blocks.append(np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape))
        trailing = fh.read(1)
    if trailing:
        raise FormatError("trailing bytes after parameters")
    return MlpParams(*blocks)


_AXIS_TO_DIM_3D = {"x": 2, "y": 1, "z": 0}


def render_slice(field: ImageField, path, axis: str | None = None, index: int | None = None) -> None:
    """Write one grayscale slice of a field as a binary PGM (P5) image.

    In-region values map linearly from the field's global [min, max] onto
    0..255 (a constant field renders as 0); out-of-region pixels render
    mid-gray 128. 2D fields render as a whole plane and take no axis; 3D
    fields require ``axis`` in x/y/z plus a slice ``index``.
    """
    mask = field.mask
    full = embed(field)
    inside = mask.inside
    if mask.ndim == 2:
        if axis is not None or index is not None:
            raise ValueError("2D fields have no slice axis")
        plane, plane_inside = full, inside
    else:
        if axis not in _AXIS_TO_DIM_3D:
            raise ValueError(f"axis must be one of x, y, z, got {axis!r}")
        if index is None:
            raise ValueError("3D rendering needs a slice index")
        dim = _AXIS_TO_DIM_3D[axis]
        if not (0 <= index < full.shape[dim]):
            raise ValueError(f"index {index} out of range for axis {axis}")
        sel = [slice(None)] * 3
        sel[dim] = index
        plane, plane_inside = full[tuple(sel)], inside[tuple(sel)]

    vmin = float(field.values.min())
    vmax = float(field.values.max())
    scale = 255.0 / (vmax - vmin) if vmax > vmin else 0.0
    pixels = np.rint((plane - vmin) * scale).astype(np.uint8)
    pixels[~plane_inside] = 128
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes(order="C"))


def threshold_voxels(field: ImageField, fraction: float) -> np.ndarray:
    """Cells with |value| >= fraction * max|value|, as rows (x, y[, z], value).

    A flat stand-in for transparency-style volume display: keep only the
    strong cells and let the caller plot or inspect them.
    """
    if not (0.0 <= fraction <= 1.0):
        raise ValueError("fraction must be in [0, 1]")
    peak = float(np.max(np.abs(field.values)))
    keep = np.abs(field.values) >= fraction * peak
    coords = np.unravel_index(field.mask.flat_indices[keep], field.mask.shape)
    cols = coords[::-1]  # (x, y[, z])
    return np.column_stack([*cols, field.values[keep]])
