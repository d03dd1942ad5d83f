"""DDIM schedule and the data-consistent reverse diffusion loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .cg import CgConfig, NumericalFailure, cg_solve
from .operators import Measurement, adjoint, hard_data_consistency, normal_operator
from .phantom import GaussianMixturePrior, epsilon_fn

log = logging.getLogger(__name__)

__all__ = [
    "DiffusionSchedule",
    "SamplerState",
    "make_schedule",
    "tweedie",
    "ddim_step",
    "reconstruct",
]


@dataclass(frozen=True, eq=False)
class DiffusionSchedule:
    """``alpha_bar[t]`` for ``t = 0..T`` (``alpha_bar[0] = 1``), ``beta_tilde[t - 1]`` for step ``t``."""

    alpha_bar: np.ndarray
    beta_tilde: np.ndarray
    eta: float

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=float)
        bt = np.asarray(self.beta_tilde, dtype=float)
        if ab.ndim != 1 or ab.size < 2 or bt.shape != (ab.size - 1,):
            raise ValueError("need T + 1 alpha_bar values and T beta_tilde values")
        if ab[0] != 1.0 or np.any(np.diff(ab) >= 0) or ab[-1] <= 0:
            raise ValueError("alpha_bar must start at 1 and decrease strictly, staying positive")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if np.any(bt < 0) or np.any(self.radicands() < 0):
            raise ValueError("DDIM radicand 1 - alpha_bar[t-1] - eta^2 beta_tilde[t]^2 is negative")
        object.__setattr__(self, "alpha_bar", ab)
        object.__setattr__(self, "beta_tilde", bt)

    @property
    def T(self) -> int:
        return self.alpha_bar.size - 1

    def radicands(self) -> np.ndarray:
        return 1.0 - np.asarray(self.alpha_bar)[:-1] - self.eta**2 * np.asarray(self.beta_tilde) ** 2


def make_schedule(
    T: int, beta_min: float, beta_max: float, eta: float, train_steps: int | None = None
) -> DiffusionSchedule:
    """Linear-beta schedule, optionally respaced.

    Betas are linearly spaced over ``train_steps`` steps (default ``T``) and
    ``alpha_bar`` is read off at ``T`` evenly strided steps. ``beta_tilde`` is
    the usual DDIM noise scale, so ``eta * beta_tilde`` is the per-step
    standard deviation.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0 < beta_min <= beta_max < 1:
        raise ValueError(f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]")
    n = T if train_steps is None else train_steps
    if n < T:
        raise ValueError("train_steps must be >= T")
    betas = np.linspace(beta_min, beta_max, n)
    ab_train = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    idx = np.round(np.linspace(0, n, T + 1)).astype(int)
    ab = ab_train[idx]
    prev, cur = ab[:-1], ab[1:]
    bt = np.sqrt((1.0 - prev) / (1.0 - cur) * (1.0 - cur / prev))
    return DiffusionSchedule(alpha_bar=ab, beta_tilde=bt, eta=float(eta))


@dataclass(frozen=True, eq=False)
class SamplerState:
    x_t: np.ndarray
    t: int
    rng: np.random.Generator


def tweedie(x_t: np.ndarray, eps: np.ndarray, alpha_bar_t: float) -> np.ndarray:
    return (x_t - np.sqrt(1.0 - alpha_bar_t) * eps) / np.sqrt(alpha_bar_t)


def ddim_step(
    state: SamplerState,
    x0_dc: np.ndarray,
    eps: np.ndarray,
    guidance_grad: np.ndarray | None,
    gamma: float,
    schedule: DiffusionSchedule,
) -> SamplerState:
    """One DDIM update; with a guidance gradient, ``gamma * grad`` is added to ``eps``."""
    t = state.t
    if t < 1:
        raise ValueError("ddim_step needs t >= 1; the chain is already at t = 0")
    ab_prev = schedule.alpha_bar[t - 1]
    noise_std = schedule.eta * schedule.beta_tilde[t - 1]
    direction = eps if guidance_grad is None else eps + gamma * guidance_grad
    coef = np.sqrt(max(1.0 - ab_prev - noise_std**2, 0.0))
    x_prev = np.sqrt(ab_prev) * x0_dc + coef * direction
    if noise_std > 0:
        x_prev = x_prev + noise_std * state.rng.standard_normal(x_prev.shape)
    return replace(state, x_t=x_prev, t=t - 1)


# guidance(x_t, alpha_bar_t, eps, t) -> (grad, gamma) or None
GuidanceFn = Callable[[np.ndarray, float, np.ndarray, int], "tuple[np.ndarray, float] | None"]


def reconstruct(
    y: Measurement,
    prior: GaussianMixturePrior,
    schedule: DiffusionSchedule,
    cg_cfg: CgConfig = CgConfig(),
    guidance: GuidanceFn | None = None,
    seed: int = 0,
    x_T: np.ndarray | None = None,
) -> np.ndarray:
    """Reverse diffusion from ``x_T ~ N(0, I)`` with CG data consistency at every step.

    The last step ``t = 1 -> 0`` uses the exact projection instead of CG, so the
    returned image satisfies ``A x0 = y``. ``guidance`` (see
    :func:`sgr.guidance.make_guidance`) supplies the scaled loss gradient.
    """
    if y.shape != prior.shape:
        raise ValueError(f"measurement {y.shape} and prior {prior.shape} differ")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(y.shape) if x_T is None else np.array(x_T, dtype=float)
    rhs = adjoint(y, real=True)
    op = normal_operator(y.mask)
    state = SamplerState(x_t=x, t=schedule.T, rng=rng)
    while state.t > 0:
        t = state.t
        ab = schedule.alpha_bar[t]
        eps = epsilon_fn(prior, state.x_t, ab)
        x0 = tweedie(state.x_t, eps, ab)
        x0_dc = cg_solve(op, rhs, x0, cg_cfg) if t > 1 else hard_data_consistency(x0, y)
        grad, gamma = None, 1.0
        if guidance is not None and t > 1:
            out = guidance(state.x_t, ab, eps, t)
            if out is not None:
                grad, gamma = out
        state = ddim_step(state, x0_dc, eps, grad, gamma, schedule)
        if not np.all(np.isfinite(state.x_t)):
            raise NumericalFailure(f"non-finite sample at step t={t}", stage="ddim", iteration=t)
    return state.x_t
