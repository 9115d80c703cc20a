"""Ground-truth conductivity phantoms built from geometric primitives.

Shapes are posed in normalized box coordinates: the grid's bounding box is
the unit square (2D) or unit cube (3D), so one phantom spec rasterizes
consistently onto any resolution. On boxes that are not physically cubic
the normalized dimensions stretch accordingly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .grid import ImageField, RegionMask

__all__ = [
    "ShapePrimitive",
    "PhantomSpec",
    "rasterize",
    "builtin_case",
    "phantom_from_json",
]

_KIND_NDIM = {
    "triangle": 2,
    "rectangle": 2,
    "cone": 3,
    "sphere": 3,
    "cylinder": 3,
    "cuboid": 3,
}

# pose/dims lengths per kind
_KIND_ARITY = {
    "triangle": (6, 0),  # three vertices, no dims
    "rectangle": (2, 2),  # center, (width, height)
    "cone": (3, 2),  # base-center (x, y, z0), (base radius, height); apex up
    "sphere": (3, 1),  # center, radius
    "cylinder": (3, 2),  # base-center (x, y, z0), (radius, height)
    "cuboid": (3, 3),  # center, side lengths
}


@dataclass(frozen=True)
class ShapePrimitive:
    """One solid inclusion: a kind tag, a pose, and its size parameters."""

    kind: str
    pose: tuple[float, ...]
    dims: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in _KIND_NDIM:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        object.__setattr__(self, "pose", tuple(float(v) for v in self.pose))
        object.__setattr__(self, "dims", tuple(float(v) for v in self.dims))
        np_, nd = _KIND_ARITY[self.kind]
        if len(self.pose) != np_ or len(self.dims) != nd:
            raise ValueError(
                f"{self.kind} expects {np_} pose values and {nd} dims, "
                f"got {len(self.pose)} and {len(self.dims)}"
            )
        if not all(np.isfinite(self.pose)):
            raise ValueError("shape pose must be finite")
        if any(d <= 0 for d in self.dims):
            raise ValueError("shape dimensions must be positive")
        if self.kind == "triangle":
            x1, y1, x2, y2, x3, y3 = self.pose
            area2 = (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1)
            if abs(area2) < 1e-12:
                raise ValueError("degenerate triangle (zero area)")

    @property
    def ndim(self) -> int:
        return _KIND_NDIM[self.kind]

    def contains(self, x: np.ndarray, y: np.ndarray, z: np.ndarray | None = None) -> np.ndarray:
        """Membership test at normalized coordinates (vectorized)."""
        if self.kind == "triangle":
            x1, y1, x2, y2, x3, y3 = self.pose
            s1 = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
            s2 = (x3 - x2) * (y - y2) - (y3 - y2) * (x - x2)
            s3 = (x1 - x3) * (y - y3) - (y1 - y3) * (x - x3)
            return ((s1 >= 0) & (s2 >= 0) & (s3 >= 0)) | ((s1 <= 0) & (s2 <= 0) & (s3 <= 0))
        if self.kind == "rectangle":
            cx, cy = self.pose
            w, h = self.dims
            return (np.abs(x - cx) <= w / 2) & (np.abs(y - cy) <= h / 2)
        if z is None:
            raise ValueError(f"{self.kind} needs 3D coordinates")
        if self.kind == "sphere":
            cx, cy, cz = self.pose
            (r,) = self.dims
            return (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= r * r
        if self.kind == "cuboid":
            cx, cy, cz = self.pose
            wx, wy, wz = self.dims
            return (
                (np.abs(x - cx) <= wx / 2)
                & (np.abs(y - cy) <= wy / 2)
                & (np.abs(z - cz) <= wz / 2)
            )
        cx, cy, z0 = self.pose
        r, height = self.dims
        in_z = (z >= z0) & (z <= z0 + height)
        r2 = (x - cx) ** 2 + (y - cy) ** 2
        if self.kind == "cylinder":
            return in_z & (r2 <= r * r)
        # cone: radius tapers linearly from r at the base to 0 at the apex
        with np.errstate(invalid="ignore"):
            local = r * (1.0 - (z - z0) / height)
        return in_z & (r2 <= local * local)


@dataclass(frozen=True)
class PhantomSpec:
    """Background conductivity plus an ordered list of inclusions.

    Later inclusions overwrite earlier ones where they overlap.
    """

    background: float
    inclusions: tuple[tuple[ShapePrimitive, float], ...] = ()

    def __post_init__(self) -> None:
        if not (self.background > 0):
            raise ValueError("background conductivity must be positive")
        object.__setattr__(self, "inclusions", tuple(self.inclusions))
        for shape, cond in self.inclusions:
            if not (cond > 0):
                raise ValueError("inclusion conductivity must be positive")
        ndims = {shape.ndim for shape, _ in self.inclusions}
        if len(ndims) > 1:
            raise ValueError("phantom mixes 2D and 3D shapes")

    @property
    def ndim(self) -> int | None:
        """2 or 3 when inclusions pin it down, None for background-only."""
        for shape, _ in self.inclusions:
            return shape.ndim
        return None


def rasterize(spec: PhantomSpec, mask: RegionMask) -> ImageField:
    """Paint the phantom onto the in-region cells of a mask.

    Each cell takes the conductivity of the last inclusion containing its
    center, else the background. Inclusions poking outside the region are
    clipped implicitly (only in-region centers are evaluated).
    """
    if spec.ndim is not None and spec.ndim != mask.ndim:
        raise ValueError(f"{spec.ndim}D phantom cannot rasterize onto a {mask.ndim}D mask")
    coords = np.unravel_index(mask.flat_indices, mask.shape)
    if mask.ndim == 2:
        ny, nx = mask.shape
        x = (coords[1] + 0.5) / nx
        y = (coords[0] + 0.5) / ny
        z = None
    else:
        nz, ny, nx = mask.shape
        x = (coords[2] + 0.5) / nx
        y = (coords[1] + 0.5) / ny
        z = (coords[0] + 0.5) / nz
    values = np.full(mask.n_inside, float(spec.background))
    for shape, cond in spec.inclusions:
        values[shape.contains(x, y, z)] = cond
    return ImageField(mask, values)


# Inclusion poses are fixed constants chosen to give well-separated objects
# comfortably inside the circular/cylindrical region at any resolution.
_BUILTIN_CASES: dict[int, tuple[float, tuple[tuple[str, tuple, tuple, float], ...]]] = {
    1: (2.0, (("triangle", (0.30, 0.32, 0.64, 0.40, 0.38, 0.68), (), 0.8),)),
    2: (
        2.0,
        (
            ("triangle", (0.26, 0.54, 0.52, 0.62, 0.34, 0.80), (), 0.4),
            ("rectangle", (0.58, 0.34), (0.34, 0.12), 1.2),
        ),
    ),
    3: (2.0, (("cone", (0.42, 0.42, 0.20), (0.18, 0.50), 1.0),)),
    4: (
        2.0,
        (
            ("cone", (0.35, 0.60, 0.15), (0.16, 0.45), 0.8),
            ("cylinder", (0.65, 0.35, 0.25), (0.13, 0.50), 1.2),
        ),
    ),
    5: (
        2.0,
        (
            ("cone", (0.32, 0.60, 0.20), (0.15, 0.40), 0.4),
            ("sphere", (0.66, 0.40, 0.45), (0.13,), 1.0),
            ("cuboid", (0.50, 0.50, 0.78), (0.50, 0.18, 0.12), 1.2),
        ),
    ),
}


def builtin_case(case_id: int) -> PhantomSpec:
    """One of the five built-in phantoms (1-2 are 2D, 3-5 are 3D)."""
    if case_id not in _BUILTIN_CASES:
        raise ValueError(f"case id must be 1..5, got {case_id}")
    background, shapes = _BUILTIN_CASES[case_id]
    inclusions = tuple(
        (ShapePrimitive(kind, pose, dims), cond) for kind, pose, dims, cond in shapes
    )
    return PhantomSpec(background, inclusions)


def phantom_from_json(doc) -> PhantomSpec:
    """Parse a phantom from a JSON document (dict, string, or file path).

    Schema: ``{"background": number, "inclusions": [{"kind": str,
    "pose": [num...], "dims": [num...], "conductivity": number}]}``.
    """
    if isinstance(doc, (str, bytes)):
        text = str(doc)
        if not text.lstrip().startswith("{"):
            with open(text, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        else:
            doc = json.loads(text)
    if not isinstance(doc, dict):
        raise ValueError("phantom document must be a JSON object")
    try:
        background = float(doc["background"])
        entries = doc.get("inclusions", [])
        inclusions = tuple(
            (
                ShapePrimitive(e["kind"], tuple(e["pose"]), tuple(e.get("dims", ()))),
                float(e["conductivity"]),
            )
            for e in entries
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed phantom document: {exc}") from exc
    return PhantomSpec(background, inclusions)
