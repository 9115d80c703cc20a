"""Image quality metrics on masked fields: relative error and a mean
structural-similarity index with a small Gaussian window.

Both metrics expect inputs that were already peak-normalized (divided by
their max absolute value); they do not normalize internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ImageField, embed

__all__ = ["SsimParams", "relative_error", "mssim"]


@dataclass(frozen=True)
class SsimParams:
    """Stabilization constants and window shape for the similarity index."""

    psi1: float = 0.01
    psi2: float = 0.03
    gamma: float = 1.0  # dynamic range
    gaussian_sigma: float = 0.35  # in cells
    window_radius: int = 1

    def __post_init__(self) -> None:
        if min(self.psi1, self.psi2, self.gamma, self.gaussian_sigma) <= 0:
            raise ValueError("similarity parameters must be positive")
        if self.window_radius < 1:
            raise ValueError("window radius must be at least 1")

    @property
    def chi1(self) -> float:
        return (self.psi1 * self.gamma) ** 2

    @property
    def chi2(self) -> float:
        return (self.psi2 * self.gamma) ** 2


def _check_pair(pred: ImageField, truth: ImageField) -> None:
    if pred.mask != truth.mask:
        raise ValueError("fields live on different masks")


def relative_error(pred: ImageField, truth: ImageField) -> float:
    """||pred - truth|| / ||truth|| (L2 over in-region cells)."""
    _check_pair(pred, truth)
    denom = float(np.linalg.norm(truth.values))
    if denom == 0.0:
        raise ValueError("ground truth is identically zero")
    return float(np.linalg.norm(pred.values - truth.values)) / denom


def _window_offsets(ndim: int, radius: int, sigma: float):
    offs = []
    rng = range(-radius, radius + 1)
    if ndim == 2:
        for oy in rng:
            for ox in rng:
                offs.append(((oy, ox), np.exp(-(ox * ox + oy * oy) / (2.0 * sigma * sigma))))
    else:
        for oz in rng:
            for oy in rng:
                for ox in rng:
                    offs.append(
                        ((oz, oy, ox), np.exp(-(ox * ox + oy * oy + oz * oz) / (2.0 * sigma * sigma)))
                    )
    return offs


def _window_sum(arr: np.ndarray, offsets) -> np.ndarray:
    out = np.zeros_like(arr, dtype=np.float64)
    for off, w in offsets:
        dst, src = [], []
        for n, s in zip(arr.shape, off):
            dst.append(slice(max(0, -s), n - max(0, s)))
            src.append(slice(max(0, s), n - max(0, -s)))
        out[tuple(dst)] += w * arr[tuple(src)]
    return out


def mssim(pred: ImageField, truth: ImageField, params: SsimParams = SsimParams()) -> float:
    """Mean structural similarity over the in-region cells.

    Local means, variances and the cross-covariance use Gaussian window
    weights renormalized over the in-region cells of each window, so
    cells at the mask boundary are not penalized for their truncated
    neighborhoods.
    """
    _check_pair(pred, truth)
    mask = pred.mask
    inside = mask.inside.astype(np.float64)
    offsets = _window_offsets(mask.ndim, params.window_radius, params.gaussian_sigma)

    weight = _window_sum(inside, offsets)
    ep = embed(pred)
    eg = embed(truth)
    mean_p = _window_sum(ep, offsets) / weight
    mean_g = _window_sum(eg, offsets) / weight
    var_p = _window_sum(ep * ep, offsets) / weight - mean_p * mean_p
    var_g = _window_sum(eg * eg, offsets) / weight - mean_g * mean_g
    cov = _window_sum(ep * eg, offsets) / weight - mean_p * mean_g

    chi1, chi2 = params.chi1, params.chi2
    ssim_map = ((2.0 * mean_p * mean_g + chi1) * (2.0 * cov + chi2)) / (
        (mean_p * mean_p + mean_g * mean_g + chi1) * (var_p + var_g + chi2)
    )
    return float(ssim_map.reshape(-1)[mask.flat_indices].mean())
