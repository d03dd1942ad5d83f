"""Conjugate gradient for the data-consistency normal equations ``A*A x = A*y``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["CgConfig", "NumericalFailure", "cg_solve"]


class NumericalFailure(RuntimeError):
    """Non-finite values appeared; ``stage`` and ``iteration`` locate where."""

    def __init__(self, message: str, stage: str = "", iteration: int | None = None):
        super().__init__(message)
        self.stage = stage
        self.iteration = iteration


@dataclass(frozen=True)
class CgConfig:
    max_iters: int = 5
    residual_tolerance: float = 1e-6

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.residual_tolerance < 0:
            raise ValueError("residual_tolerance must be >= 0")


def _dot(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.vdot(a, b).real)


def cg_solve(
    normal_op: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    init: np.ndarray,
    cfg: CgConfig = CgConfig(),
    callback: Callable[[int, np.ndarray, float], None] | None = None,
) -> np.ndarray:
    """Plain CG started at ``init``.

    Stops after ``cfg.max_iters`` steps or once the residual norm drops to
    ``cfg.residual_tolerance``. ``callback(k, x, rnorm)`` is called with the
    iterate after each step (``k = 0`` is the start point).
    """
    x = np.array(init, copy=True)
    r = rhs - normal_op(x)
    rr = _dot(r, r)
    if callback is not None:
        callback(0, x, np.sqrt(rr))
    if np.sqrt(rr) <= cfg.residual_tolerance:
        return x
    p = r.copy()
    for k in range(1, cfg.max_iters + 1):
        ap = normal_op(p)
        pap = _dot(p, ap)
        if pap <= 0.0:
            # direction in the null space; residual cannot be reduced further
            break
        alpha = rr / pap
        x = x + alpha * p
        r = r - alpha * ap
        rr_new = _dot(r, r)
        if not (np.isfinite(rr_new) and np.all(np.isfinite(x))):
            raise NumericalFailure(f"non-finite CG iterate at iteration {k}", stage="cg", iteration=k)
        if callback is not None:
            callback(k, x, np.sqrt(rr_new))
        if np.sqrt(rr_new) <= cfg.residual_tolerance:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x
