"""Adam, positivity projection, and gradient-statistics loss weighting."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(n: int, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    return AdamState(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, "
                         f"state {state.m.shape}")
    if not np.all(np.isfinite(grads)):
        bad = np.flatnonzero(~np.isfinite(grads))
        raise NonFiniteGradientError(
            f"{bad.size} non-finite gradient entries (first at index {bad[0]}) "
            f"at step {state.t + 1}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, replace(state, m=m, v=v, t=t)


def project_positive(value, floor: float = 1e-6):
    """Clamp from below; used to keep identified diffusivities positive."""
    if np.ndim(value) == 0:
        return max(float(value), floor)
    return np.maximum(value, floor)


@dataclass
class LossWeights:
    """Per-term loss weights; when ``adaptive`` the ``target`` term's weight is
    re-estimated every iteration by :func:`adaptive_lambda`."""

    weights: dict[str, float] = field(default_factory=dict)
    adaptive: bool = False
    target: str = "data"
    alpha: float = 0.1

    def __getitem__(self, name: str) -> float:
        return self.weights.get(name, 1.0)

    def __setitem__(self, name: str, value: float):
        if not value > 0:
            raise ValueError(f"loss weight for {name!r} must be positive, got {value}")
        self.weights[name] = float(value)


def adaptive_lambda(grad_r, grad_weighted_data, lam_old: float, alpha: float = 0.1) -> float:
    """Moving-average update of a data-term weight from gradient statistics.

    ``lam_hat = max|grad_r| / mean|grad_weighted_data|`` where the second
    vector is the gradient of the already-weighted term ``lam_old * L_data``;
    returns ``(1 - alpha) * lam_old + alpha * lam_hat``.
    """
    grad_r = np.asarray(grad_r, dtype=np.float64)
    grad_d = np.asarray(grad_weighted_data, dtype=np.float64)
    if grad_r.size == 0 or grad_d.size == 0:
        raise ValueError("gradient vectors must be nonempty")
    denom = np.mean(np.abs(grad_d))
    if not denom > 0:
        log.warning("mean |grad of weighted data loss| is zero; keeping lambda = %g", lam_old)
        return float(lam_old)
    lam_hat = np.max(np.abs(grad_r)) / denom
    return float((1.0 - alpha) * lam_old + alpha * lam_hat)
