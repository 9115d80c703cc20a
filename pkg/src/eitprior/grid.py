"""Regular-grid discretization of 2D/3D imaging regions.

Arrays are indexed ``[y, x]`` in 2D and ``[z, y, x]`` in 3D, so C-order
flattening scans cells x-fastest, then y, then z. That scan order is the
canonical cell order everywhere (masks, image vectors, file formats).
Geometry is expressed in cell units: cell ``(ix, iy, iz)`` has its center
at ``(ix + 0.5, iy + 0.5, iz + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GridSpec",
    "RegionMask",
    "ImageField",
    "make_circular_mask",
    "make_cylindrical_mask",
    "make_full_mask",
    "make_polygon_mask",
    "embed",
    "extract",
]


@dataclass(frozen=True)
class GridSpec:
    """Cell counts per axis plus physical side lengths of the bounding box.

    ``extent`` defaults to a unit box; only relative geometry matters for
    normalized difference imaging, so the default is almost always fine.
    """

    ndim: int
    nx: int
    ny: int
    nz: int = 1
    extent: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.ndim not in (2, 3):
            raise ValueError(f"ndim must be 2 or 3, got {self.ndim}")
        if self.ndim == 2 and self.nz != 1:
            raise ValueError("2D grids must have nz == 1")
        counts = (self.nx, self.ny) if self.ndim == 2 else (self.nx, self.ny, self.nz)
        if any(int(c) < 2 for c in counts):
            raise ValueError(f"cell counts must be at least 2, got {counts}")
        if not self.extent:
            object.__setattr__(self, "extent", (1.0,) * self.ndim)
        if len(self.extent) != self.ndim or any(e <= 0 for e in self.extent):
            raise ValueError(f"extent must be {self.ndim} positive lengths")

    @property
    def shape(self) -> tuple[int, ...]:
        """Array shape with z slowest, matching the canonical scan order."""
        if self.ndim == 2:
            return (self.ny, self.nx)
        return (self.nz, self.ny, self.nx)


class RegionMask:
    """In-region cell set of a grid plus the flat index maps.

    ``flat_indices[k]`` is the full-grid flat index (C order) of in-region
    cell ``k``; ``inverse`` maps full-grid flat indices back to ``0..N-1``
    and holds ``-1`` outside the region. Instances are immutable.
    """

    __slots__ = ("inside", "flat_indices", "inverse", "n_inside")

    def __init__(self, inside: np.ndarray):
        inside = np.ascontiguousarray(inside, dtype=bool)
        if inside.ndim not in (2, 3):
            raise ValueError(f"mask must be 2D or 3D, got ndim={inside.ndim}")
        flat = np.flatnonzero(inside)
        if flat.size == 0:
            raise ValueError("region is empty")
        inverse = np.full(inside.size, -1, dtype=np.int64)
        inverse[flat] = np.arange(flat.size)
        inside.setflags(write=False)
        inverse.setflags(write=False)
        flat.setflags(write=False)
        self.inside = inside
        self.flat_indices = flat
        self.inverse = inverse
        self.n_inside = int(flat.size)

    @property
    def ndim(self) -> int:
        return self.inside.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.inside.shape

    def __eq__(self, other) -> bool:
        if not isinstance(other, RegionMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.all(self.inside == other.inside))

    def __repr__(self) -> str:
        return f"RegionMask(shape={self.shape}, n_inside={self.n_inside})"


@dataclass
class ImageField:
    """Real values on the in-region cells of a mask, in canonical scan order."""

    mask: RegionMask
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (self.mask.n_inside,):
            raise ValueError(
                f"expected {self.mask.n_inside} values, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        self.values = values

    @property
    def ndim(self) -> int:
        return self.mask.ndim


def embed(field: ImageField) -> np.ndarray:
    """Scatter the in-region values into a full-grid array, zeros outside."""
    full = np.zeros(field.mask.inside.size, dtype=np.float64)
    full[field.mask.flat_indices] = field.values
    return full.reshape(field.mask.shape)


def extract(full: np.ndarray, mask: RegionMask) -> ImageField:
    """Gather the in-region cells of a full-grid array into an ImageField."""
    full = np.asarray(full, dtype=np.float64)
    if full.shape != mask.shape:
        raise ValueError(f"array shape {full.shape} does not match mask {mask.shape}")
    return ImageField(mask, full.reshape(-1)[mask.flat_indices].copy())


def make_circular_mask(n: int, radius: float | None = None) -> RegionMask:
    """Disk of cells on an n-by-n grid.

    A cell is inside iff its center lies within ``radius`` of the grid
    center; ties (distance exactly equal) count as inside. ``radius``
    defaults to n/2, the inscribed circle of the bounding square.
    """
    n = int(n)
    if n < 2:
        raise ValueError(f"grid side must be at least 2, got {n}")
    r = n / 2.0 if radius is None else float(radius)
    c = n / 2.0
    y, x = np.ogrid[0:n, 0:n]
    d2 = (x + 0.5 - c) ** 2 + (y + 0.5 - c) ** 2
    return RegionMask(d2 <= r * r)


def make_cylindrical_mask(nx: int, ny: int, nz: int) -> RegionMask:
    """Cylinder mask: the 2D disk replicated identically on every z slice."""
    if nx != ny:
        raise ValueError(f"cylindrical masks need nx == ny, got {nx} x {ny}")
    if nz < 1:
        raise ValueError(f"nz must be positive, got {nz}")
    disk = make_circular_mask(nx).inside
    return RegionMask(np.broadcast_to(disk, (int(nz), ny, nx)).copy())


def make_full_mask(nx: int, ny: int, nz: int | None = None) -> RegionMask:
    """Mask covering the whole grid (every cell in-region)."""
    shape = (ny, nx) if nz is None else (nz, ny, nx)
    return RegionMask(np.ones(shape, dtype=bool))


def _winding_number(px: np.ndarray, py: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Winding number of a closed polygon around each point (vectorized)."""
    wn = np.zeros(px.shape, dtype=np.int64)
    nv = len(verts)
    for k in range(nv):
        x1, y1 = verts[k]
        x2, y2 = verts[(k + 1) % nv]
        is_left = (x2 - x1) * (py - y1) - (px - x1) * (y2 - y1)
        upward = (y1 <= py) & (y2 > py)
        downward = (y1 > py) & (y2 <= py)
        wn += (upward & (is_left > 0)).astype(np.int64)
        wn -= (downward & (is_left < 0)).astype(np.int64)
    return wn


def make_polygon_mask(grid: GridSpec, boundary) -> RegionMask:
    """Mask of cells whose centers fall inside a simple closed 2D polygon.

    The polygon is given in cell units of the (x, y) plane. On a 3D grid
    the same cross-section is extruded to every z slice. Vertices may or
    may not repeat the first point at the end.
    """
    verts = np.asarray(boundary, dtype=np.float64)
    if verts.ndim != 2 or verts.shape[1] != 2:
        raise ValueError("boundary must be an (k, 2) array of vertices")
    if len(verts) > 1 and np.array_equal(verts[0], verts[-1]):
        verts = verts[:-1]
    if len(verts) < 3:
        raise ValueError("polygon needs at least 3 distinct vertices")
    x, y = verts[:, 0], verts[:, 1]
    area2 = np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    if abs(area2) < 1e-12:
        raise ValueError("degenerate polygon (zero area)")
    cx = np.arange(grid.nx) + 0.5
    cy = np.arange(grid.ny) + 0.5
    px, py = np.meshgrid(cx, cy)
    inside2d = _winding_number(px, py, verts) != 0
    if grid.ndim == 2:
        return RegionMask(inside2d)
    return RegionMask(np.broadcast_to(inside2d, (grid.nz, grid.ny, grid.nx)).copy())
