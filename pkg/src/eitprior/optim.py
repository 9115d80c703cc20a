"""Adam over flat parameter vectors, with the standard bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["AdamState", "adam_step"]


@dataclass
class AdamState:
    """Moment estimates and hyperparameters for one optimized vector."""

    m: np.ndarray
    v: np.ndarray
    step_count: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    scratch: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def fresh(cls, n_params: int, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        if not (lr > 0):
            raise ValueError("learning rate must be positive")
        return cls(np.zeros(n_params), np.zeros(n_params), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; mutates the moments in ``state`` and
    returns the new parameter vector.

    Written with in-place elementwise ops: the moment vectors are large in
    the prior-parameterized reconstructions and temporary-array traffic
    dominates the step otherwise.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.shape or grad.shape != state.m.shape:
        raise ValueError("parameter/gradient/state lengths do not match")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")
    if state.scratch is None or state.scratch.shape != grad.shape:
        state.scratch = np.empty_like(state.m)
    state.step_count += 1
    t = state.step_count
    m, v, work = state.m, state.v, state.scratch

    m *= state.beta1
    np.multiply(grad, 1.0 - state.beta1, out=work)
    m += work
    v *= state.beta2
    np.multiply(grad, grad, out=work)
    work *= 1.0 - state.beta2
    v += work

    # update = lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    np.divide(v, 1.0 - state.beta2**t, out=work)
    np.sqrt(work, out=work)
    work += state.eps
    np.divide(m, work, out=work)
    work *= state.lr / (1.0 - state.beta1**t)
    return params - work
