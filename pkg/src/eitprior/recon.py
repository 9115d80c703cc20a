"""Reconstruction drivers for the linearized difference-imaging problem.

Two families share the same Adam loop and objective structure:

* ``rsip_*``: the image is the output of a small untrained MLP fed a
  fixed noise vector, and Adam optimizes the network parameters. The
  Sigmoid output layer constrains the image to (0, 1).
* ``baseline_*``: Adam optimizes the image vector directly, starting
  from zero, with no range constraint.

The objective is ||V - J s||^2 + weight/N * R(s) with R either the
smoothed isotropic TV or the Laplacian-kernel penalty. Dividing the
penalty by N in both families keeps the weights comparable across
resolutions and algorithms.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import mlp
from .grid import ImageField, RegionMask
from .optim import AdamState, adam_step
from .regularizers import DEFAULT_TV_EPSILON, regularizer
from .sensing import VoltageFrame

__all__ = [
    "ALGORITHMS",
    "DivergenceError",
    "ReconConfig",
    "ReconResult",
    "rsip_reconstruct",
    "baseline_reconstruct",
    "reconstruct",
    "normalize_for_eval",
]

ALGORITHMS = ("rsip_tv", "rsip_lap", "baseline_tv", "baseline_lap")

DIVERGENCE_FACTOR = 1e6

_JSON_ALIASES = {"eta": "reg_weight", "phi": "reg_weight", "t": "iters"}


class DivergenceError(RuntimeError):
    """Loss became non-finite or blew up past the divergence guard."""


@dataclass
class ReconConfig:
    """Algorithm selection plus every knob needed to reproduce a run.

    ``reg_weight`` plays the role of eta for the prior-parameterized
    algorithms and phi for the direct baselines; the JSON loader accepts
    either spelling. ``mlp_input``/``mlp_hidden`` only matter for rsip_*.
    """

    algorithm: str
    reg_weight: float = 0.0
    iters: int = 2000
    lr: float = 1e-4
    seed: int = 0
    mlp_hidden: int = 2000
    mlp_input: int = 328
    tv_epsilon: float = DEFAULT_TV_EPSILON
    record_trace: bool = True

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.reg_weight < 0:
            raise ValueError("regularization weight must be nonnegative")
        if self.iters < 1:
            raise ValueError("iteration count must be at least 1")
        if not (self.lr > 0):
            raise ValueError("learning rate must be positive")
        if min(self.mlp_hidden, self.mlp_input) < 1:
            raise ValueError("MLP layer sizes must be positive")

    @property
    def regularizer_kind(self) -> str:
        return "tv" if self.algorithm.endswith("_tv") else "lap"

    @property
    def uses_prior(self) -> bool:
        return self.algorithm.startswith("rsip_")

    @classmethod
    def from_json(cls, doc) -> "ReconConfig":
        """Build from a JSON object, string, or file path."""
        if isinstance(doc, (str, bytes)):
            text = str(doc)
            if not text.lstrip().startswith("{"):
                with open(text, "r", encoding="utf-8") as fh:
                    doc = json.load(fh)
            else:
                doc = json.loads(text)
        if not isinstance(doc, dict):
            raise ValueError("config must be a JSON object")
        kwargs = {}
        valid = set(cls.__dataclass_fields__)
        for key, value in doc.items():
            key = _JSON_ALIASES.get(key, key)
            if key not in valid:
                raise ValueError(f"unknown config key {key!r}")
            if key in kwargs:
                raise ValueError(f"config sets {key!r} twice")
            kwargs[key] = value
        if "algorithm" not in kwargs:
            raise ValueError("config must name an algorithm")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ReconResult:
    """Reconstructed normalized conductivity change plus run diagnostics.

    The traces hold the objective and its data-fidelity part evaluated at
    each pre-update iterate, so index 0 is the initial point.
    """

    sigma: ImageField
    loss_trace: np.ndarray
    data_fidelity_trace: np.ndarray
    wall_time: float


def _check_problem(j: np.ndarray, v: np.ndarray, mask: RegionMask) -> None:
    if j.ndim != 2:
        raise ValueError("sensitivity matrix must be 2D")
    if j.shape[1] != mask.n_inside:
        raise ValueError(f"matrix has {j.shape[1]} columns for {mask.n_inside} cells")
    if v.shape != (j.shape[0],):
        raise ValueError(f"data length {v.shape} does not match {j.shape[0]} rows")


def _data_vector(v) -> np.ndarray:
    if isinstance(v, VoltageFrame):
        if v.kind != "normalized":
            raise ValueError("reconstruction expects a normalized voltage frame")
        return v.values
    return np.asarray(v, dtype=np.float64)


def _guard_loss(loss: float, initial: float, iteration: int) -> None:
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss at iteration {iteration}")
    if loss > DIVERGENCE_FACTOR * max(initial, np.finfo(float).tiny):
        raise DivergenceError(
            f"loss {loss:.3e} exceeded {DIVERGENCE_FACTOR:.0e} x initial at iteration {iteration}"
        )


def rsip_reconstruct(j: np.ndarray, v, mask: RegionMask, cfg: ReconConfig) -> ReconResult:
    """Fit the MLP-parameterized image to the normalized data.

    Per iteration: evaluate the network, form the objective and its
    gradient with respect to the image, pull the gradient back through
    the network by hand, and take one Adam step on the flat parameter
    vector. The returned image is the network output after the final
    update.
    """
    if not cfg.uses_prior:
        raise ValueError(f"rsip_reconstruct got algorithm {cfg.algorithm!r}")
    j = np.asarray(j, dtype=np.float64)
    v = _data_vector(v)
    _check_problem(j, v, mask)
    n = mask.n_inside
    reg = regularizer(cfg.regularizer_kind, mask.ndim, cfg.tv_epsilon)
    weight = cfg.reg_weight / n

    rng = np.random.default_rng(cfg.seed)
    params0 = mlp.init_params(cfg.mlp_input, cfg.mlp_hidden, n, rng)
    noise = mlp.NoiseInput(rng.uniform(0.0, 0.1, size=cfg.mlp_input))
    flat = params0.to_flat()
    grad_flat = np.empty_like(flat)
    grad_views = mlp.MlpParams.from_flat(cfg.mlp_input, cfg.mlp_hidden, n, grad_flat)
    state = AdamState.fresh(flat.size, cfg.lr)
    jt = np.ascontiguousarray(j.T)

    loss_trace = np.empty(cfg.iters)
    fidelity_trace = np.empty(cfg.iters)
    initial_loss = None
    start = time.perf_counter()
    for it in range(cfg.iters):
        params = mlp.MlpParams.from_flat(cfg.mlp_input, cfg.mlp_hidden, n, flat)
        sigma, cache = mlp.forward(params, noise)
        residual = v - j @ sigma
        fidelity = float(residual @ residual)
        reg_value, reg_grad = reg(ImageField(mask, sigma))
        loss = fidelity + weight * reg_value
        if initial_loss is None:
            initial_loss = loss
        _guard_loss(loss, initial_loss, it)
        loss_trace[it] = loss
        fidelity_trace[it] = fidelity
        dl_dsigma = -2.0 * (jt @ residual) + weight * reg_grad
        mlp.backward(params, cache, dl_dsigma, out=grad_views)
        flat = adam_step(state, flat, grad_flat)
    wall = time.perf_counter() - start

    params = mlp.MlpParams.from_flat(cfg.mlp_input, cfg.mlp_hidden, n, flat)
    sigma, _ = mlp.forward(params, noise)
    if not cfg.record_trace:
        loss_trace = loss_trace[:0]
        fidelity_trace = fidelity_trace[:0]
    return ReconResult(ImageField(mask, sigma), loss_trace, fidelity_trace, wall)


def baseline_reconstruct(j: np.ndarray, v, mask: RegionMask, cfg: ReconConfig) -> ReconResult:
    """Fit the image vector directly with Adam, starting from zeros."""
    if cfg.uses_prior:
        raise ValueError(f"baseline_reconstruct got algorithm {cfg.algorithm!r}")
    j = np.asarray(j, dtype=np.float64)
    v = _data_vector(v)
    _check_problem(j, v, mask)
    n = mask.n_inside
    reg = regularizer(cfg.regularizer_kind, mask.ndim, cfg.tv_epsilon)
    weight = cfg.reg_weight / n

    sigma = np.zeros(n)
    state = AdamState.fresh(n, cfg.lr)
    jt = np.ascontiguousarray(j.T)

    loss_trace = np.empty(cfg.iters)
    fidelity_trace = np.empty(cfg.iters)
    initial_loss = None
    start = time.perf_counter()
    for it in range(cfg.iters):
        residual = v - j @ sigma
        fidelity = float(residual @ residual)
        reg_value, reg_grad = reg(ImageField(mask, sigma))
        loss = fidelity + weight * reg_value
        if initial_loss is None:
            initial_loss = loss
        _guard_loss(loss, initial_loss, it)
        loss_trace[it] = loss
        fidelity_trace[it] = fidelity
        grad = -2.0 * (jt @ residual) + weight * reg_grad
        sigma = adam_step(state, sigma, grad)
    wall = time.perf_counter() - start

    if not cfg.record_trace:
        loss_trace = loss_trace[:0]
        fidelity_trace = fidelity_trace[:0]
    return ReconResult(ImageField(mask, sigma), loss_trace, fidelity_trace, wall)


def reconstruct(j: np.ndarray, v, mask: RegionMask, cfg: ReconConfig) -> ReconResult:
    """Dispatch on ``cfg.algorithm``."""
    if cfg.uses_prior:
        return rsip_reconstruct(j, v, mask, cfg)
    return baseline_reconstruct(j, v, mask, cfg)


def normalize_for_eval(field: ImageField) -> ImageField:
    """Divide by the max absolute value, mapping the field into [-1, 1]."""
    peak = float(np.max(np.abs(field.values)))
    if peak == 0.0:
        raise ValueError("cannot normalize an all-zero field")
    return ImageField(field.mask, field.values / peak)
