"""Smoothing priors on masked images: isotropic TV and a Laplacian-kernel
penalty, each returning the scalar value together with its exact gradient.

Differences and stencil windows that would reach outside the region (or
off the grid) are simply dropped, a Neumann-like treatment of the mask
boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import ImageField, RegionMask, embed

__all__ = [
    "DEFAULT_TV_EPSILON",
    "LapKernel",
    "default_kernel",
    "tv_value_grad",
    "lap_value_grad",
    "regularizer",
]

DEFAULT_TV_EPSILON = 1e-10

_KERNEL_3D = np.array(
    [
        [[2, 3, 2], [3, 6, 3], [2, 3, 2]],
        [[3, 6, 3], [6, -88, 6], [3, 6, 3]],
        [[2, 3, 2], [3, 6, 3], [2, 3, 2]],
    ],
    dtype=np.float64,
) / 26.0

_KERNEL_2D = np.array(
    [[1, 2, 1], [2, -12, 2], [1, 2, 1]],
    dtype=np.float64,
) / 8.0


@dataclass(frozen=True)
class LapKernel:
    """Zero-sum 3-wide stencil used by the Laplacian penalty."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape not in ((3, 3), (3, 3, 3)):
            raise ValueError(f"kernel must be 3x3 or 3x3x3, got {w.shape}")
        # exact zero is unreachable for weights like -88/26 in float64
        if abs(float(w.sum())) > 1e-15:
            raise ValueError("kernel weights must sum to zero")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def ndim(self) -> int:
        return self.weights.ndim


def default_kernel(ndim: int) -> LapKernel:
    """The built-in zero-sum stencil for the given dimensionality."""
    if ndim == 2:
        return LapKernel(_KERNEL_2D.copy())
    if ndim == 3:
        return LapKernel(_KERNEL_3D.copy())
    raise ValueError(f"ndim must be 2 or 3, got {ndim}")


def _shift_slices(n: int, s: int) -> tuple[slice, slice]:
    """Destination/source slices so dst[c] pairs with src[c + s]."""
    return slice(max(0, -s), n - max(0, s)), slice(max(0, s), n - max(0, -s))


def _correlate(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """out[c] = sum_o kernel[o] * arr[c + o], zero-padded at the edges."""
    out = np.zeros_like(arr)
    for offset in np.ndindex(kernel.shape):
        w = kernel[offset]
        if w == 0.0:
            continue
        dst, src = zip(*(_shift_slices(n, o - 1) for n, o in zip(arr.shape, offset)))
        out[dst] += w * arr[src]
    return out


def tv_value_grad(field: ImageField, epsilon: float = DEFAULT_TV_EPSILON) -> tuple[float, np.ndarray]:
    """Smoothed isotropic TV and its gradient.

    Every in-region cell contributes sqrt(sum of squared forward
    differences + epsilon); forward differences whose neighbor is outside
    the region contribute zero, so a constant field scores N * sqrt(eps).
    """
    if not (epsilon > 0):
        raise ValueError("epsilon must be positive")
    mask = field.mask
    inside = mask.inside
    emb = embed(field)
    ndim = inside.ndim
    full = (slice(None),) * ndim

    diffs = []
    sq = np.zeros_like(emb)
    for ax in range(ndim):
        lo = list(full)
        hi = list(full)
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        valid = inside[lo] & inside[hi]
        d = np.zeros_like(emb)
        d[lo] = np.where(valid, emb[hi] - emb[lo], 0.0)
        sq += d * d
        diffs.append((d, lo, hi))

    root = np.sqrt(sq + epsilon)
    value = float(root.reshape(-1)[mask.flat_indices].sum())

    grad_full = np.zeros_like(emb)
    for d, lo, hi in diffs:
        t = d / root
        grad_full -= t
        grad_full[hi] += t[lo]
    grad = grad_full.reshape(-1)[mask.flat_indices].copy()
    return value, grad


def lap_value_grad(field: ImageField, kernel: LapKernel | None = None) -> tuple[float, np.ndarray]:
    """Squared discrete Laplacian and its gradient.

    The stencil response is evaluated only at cells whose full 3-wide
    neighborhood lies in-region; the value is the sum of its squares and
    the gradient applies the (flipped) stencil a second time.
    """
    mask = field.mask
    if kernel is None:
        kernel = default_kernel(mask.ndim)
    if kernel.ndim != mask.ndim:
        raise ValueError(f"{kernel.ndim}D kernel on a {mask.ndim}D field")
    inside = mask.inside
    emb = embed(field)

    valid = np.ones_like(inside)
    for offset in np.ndindex(kernel.weights.shape):
        shifted = np.zeros_like(inside)
        dst, src = zip(*(_shift_slices(n, o - 1) for n, o in zip(inside.shape, offset)))
        shifted[dst] = inside[src]
        valid &= shifted

    response = np.where(valid, _correlate(emb, kernel.weights), 0.0)
    value = float(np.sum(response * response))
    flipped = kernel.weights[(slice(None, None, -1),) * kernel.ndim]
    grad_full = 2.0 * _correlate(response, flipped)
    grad = grad_full.reshape(-1)[mask.flat_indices].copy()
    return value, grad


def regularizer(kind: str, ndim: int,
                epsilon: float = DEFAULT_TV_EPSILON) -> Callable[[ImageField], tuple[float, np.ndarray]]:
    """Value-and-gradient closure for ``kind`` in {"tv", "lap"}."""
    if kind == "tv":
        return lambda field: tv_value_grad(field, epsilon)
    if kind == "lap":
        kernel = default_kernel(ndim)
        return lambda field: lap_value_grad(field, kernel)
    raise ValueError(f"unknown regularizer kind {kind!r}")
