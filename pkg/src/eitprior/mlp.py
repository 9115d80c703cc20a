"""Shallow decoder MLP that maps a fixed noise vector to an image.

Three layers: linear -> LeakyReLU -> linear -> Sigmoid, so the output
lives strictly in (0, 1). Forward and reverse passes are written out by
hand; the reverse pass consumes the cached activations of a matching
forward call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = [
    "LEAKY_SLOPE",
    "MlpParams",
    "NoiseInput",
    "ForwardCache",
    "init_params",
    "draw_noise",
    "forward",
    "backward",
]

LEAKY_SLOPE = 0.01


@dataclass
class MlpParams:
    """Weights and biases; also used as the container for their gradients."""

    w1: np.ndarray  # (h, g)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (n, h)
    b2: np.ndarray  # (n,)

    def __post_init__(self) -> None:
        h, g = self.w1.shape
        n = self.w2.shape[0]
        if self.b1.shape != (h,) or self.w2.shape != (n, h) or self.b2.shape != (n,):
            raise ValueError("inconsistent parameter shapes")

    @property
    def g(self) -> int:
        return self.w1.shape[1]

    @property
    def h(self) -> int:
        return self.w1.shape[0]

    @property
    def n(self) -> int:
        return self.w2.shape[0]

    @property
    def q(self) -> int:
        """Total parameter count."""
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def to_flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2.ravel(), self.b2])

    @classmethod
    def from_flat(cls, g: int, h: int, n: int, flat: np.ndarray) -> "MlpParams":
        """Views into ``flat`` in the order w1, b1, w2, b2 (no copies)."""
        expected = h * g + h + n * h + n
        if flat.shape != (expected,):
            raise ValueError(f"expected {expected} parameters, got {flat.shape}")
        o1 = h * g
        o2 = o1 + h
        o3 = o2 + n * h
        return cls(
            flat[:o1].reshape(h, g),
            flat[o1:o2],
            flat[o2:o3].reshape(n, h),
            flat[o3:],
        )


@dataclass(frozen=True)
class NoiseInput:
    """Random input vector, drawn once per reconstruction and then frozen."""

    rho: np.ndarray

    def __post_init__(self) -> None:
        rho = np.asarray(self.rho, dtype=np.float64)
        if rho.ndim != 1 or not np.all(np.isfinite(rho)):
            raise ValueError("noise input must be a finite 1D vector")
        rho.setflags(write=False)
        object.__setattr__(self, "rho", rho)


@dataclass
class ForwardCache:
    """Activations retained from a forward pass for the reverse pass."""

    rho: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    out: np.ndarray


def init_params(g: int, h: int, n: int, seed) -> MlpParams:
    """Uniform fan-in weight init on [-1/sqrt(fan_in), 1/sqrt(fan_in)], zero biases.

    ``seed`` may be an int or an existing numpy Generator.
    """
    if min(g, h, n) < 1:
        raise ValueError("layer sizes must be at least 1")
    rng = np.random.default_rng(seed)
    bound1 = 1.0 / np.sqrt(g)
    bound2 = 1.0 / np.sqrt(h)
    return MlpParams(
        rng.uniform(-bound1, bound1, size=(h, g)),
        np.zeros(h),
        rng.uniform(-bound2, bound2, size=(n, h)),
        np.zeros(n),
    )


def draw_noise(g: int, seed, scale: float = 0.1) -> NoiseInput:
    """Fixed network input: uniform on [0, scale]. Small positive values
    keep the first iterations well conditioned."""
    rng = np.random.default_rng(seed)
    return NoiseInput(rng.uniform(0.0, scale, size=g))


def forward(params: MlpParams, noise: NoiseInput | np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate the network; returns the (0,1) image vector and the cache."""
    rho = noise.rho if isinstance(noise, NoiseInput) else np.asarray(noise, dtype=np.float64)
    if rho.shape != (params.g,):
        raise ValueError(f"noise input has shape {rho.shape}, expected ({params.g},)")
    z1 = params.w1 @ rho + params.b1
    a1 = np.where(z1 >= 0, z1, LEAKY_SLOPE * z1)
    z2 = params.w2 @ a1 + params.b2
    out = expit(z2)
    return out, ForwardCache(rho, z1, a1, z2, out)


def backward(params: MlpParams, cache: ForwardCache, dl_dout: np.ndarray,
             out: MlpParams | None = None) -> MlpParams:
    """Exact reverse-mode parameter gradients of ``dl_dout . out(params)``.

    The LeakyReLU derivative at exactly zero is taken as 1. Passing ``out``
    (a parameter-shaped container, typically views into one flat buffer)
    avoids reallocating the weight-gradient matrices every iteration.
    """
    dl_dout = np.asarray(dl_dout, dtype=np.float64)
    if dl_dout.shape != cache.out.shape:
        raise ValueError("output-gradient shape does not match the cache")
    dz2 = dl_dout * cache.out * (1.0 - cache.out)
    da1 = params.w2.T @ dz2
    dz1 = da1 * np.where(cache.z1 >= 0, 1.0, LEAKY_SLOPE)
    if out is None:
        return MlpParams(np.outer(dz1, cache.rho), dz1, np.outer(dz2, cache.a1), dz2)
    np.multiply.outer(dz1, cache.rho, out=out.w1)
    np.copyto(out.b1, dz1)
    np.multiply.outer(dz2, cache.a1, out=out.w2)
    np.copyto(out.b2, dz2)
    return out
