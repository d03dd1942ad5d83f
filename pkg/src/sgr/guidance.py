"""Volume-bound guidance: BCE-based bound losses, their gradient w.r.t. ``x_t``, and norm clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cg import CgConfig, NumericalFailure
from .operators import Measurement
from .phantom import GaussianMixturePrior, epsilon_fn, score_vjp
from .sampler import DiffusionSchedule, reconstruct, tweedie
from .segmenter import SegmenterParams, class_volume, hard_segmentation, seg_forward, seg_vjp

__all__ = [
    "PROB_CLAMP",
    "GuidanceSpec",
    "StepRecord",
    "BoundsResult",
    "bce_loss",
    "upper_loss",
    "lower_loss",
    "masked_loss",
    "guidance_gradient",
    "clip_gamma",
    "make_guidance",
    "bounded_reconstruct",
]

PROB_CLAMP = 1e-12
DIRECTIONS = ("upper", "lower")


@dataclass(frozen=True)
class GuidanceSpec:
    """``sign`` multiplies the gradient; +1 adds it exactly as in the guided DDIM update."""

    direction: str
    target_class: int
    b: float = 0.005
    masked: bool = True
    sign: float = 1.0

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if not self.b > 0:
            raise ValueError("b must be positive")
        if self.target_class < 0:
            raise ValueError("target_class must be nonnegative")


def _clamped(probs, c):
    return np.clip(probs[..., c], PROB_CLAMP, 1.0 - PROB_CLAMP)


def bce_loss(probs: np.ndarray, targets: np.ndarray, c: int) -> float:
    p = _clamped(probs, c)
    return float(-np.sum(targets * np.log(p) + (1 - targets) * np.log1p(-p)))


def upper_loss(probs: np.ndarray, c: int) -> float:
    return bce_loss(probs, np.zeros(probs.shape[:-1]), c)


def lower_loss(probs: np.ndarray, c: int) -> float:
    return bce_loss(probs, np.ones(probs.shape[:-1]), c)


def _masked_loss_and_cotangent(probs, c, direction, masked=True):
    """Loss value and its gradient w.r.t. ``probs``; the indicator is held constant."""
    raw = probs[..., c]
    p = _clamped(probs, c)
    inside = (raw > PROB_CLAMP) & (raw < 1.0 - PROB_CLAMP)
    target = hard_segmentation(probs) == c
    if direction == "upper":
        weight = ~target if masked else np.ones_like(target)
        per_pixel, dp = -np.log1p(-p), 1.0 / (1.0 - p)
    else:
        weight = target if masked else np.ones_like(target)
        per_pixel, dp = -np.log(p), -1.0 / p
    loss = float(np.sum(per_pixel[weight]))
    cot = np.zeros_like(probs)
    cot[..., c] = np.where(weight & inside, dp, 0.0)
    return loss, cot


def masked_loss(probs: np.ndarray, c: int, direction: str) -> float:
    """Upper: sum over pixels not yet labeled ``c``; lower: sum over pixels labeled ``c``."""
    return _masked_loss_and_cotangent(probs, c, direction)[0]


def _check(arr, stage):
    if not np.all(np.isfinite(arr)):
        raise NumericalFailure(f"non-finite values in guidance stage {stage!r}", stage=stage)
    return arr


def guidance_gradient(
    x_t: np.ndarray,
    prior: GaussianMixturePrior,
    alpha_bar_t: float,
    params: SegmenterParams,
    spec: GuidanceSpec,
    eps: np.ndarray | None = None,
    loss_scale: float = 1.0,
) -> tuple[np.ndarray, float]:
    """Gradient of the bound loss of ``seg(tweedie(x_t))`` with respect to ``x_t``.

    The chain is seg_vjp -> Tweedie Jacobian -> score Hessian. The CG refinement
    is not differentiated through. Returns ``(grad, loss)``, both scaled by
    ``loss_scale`` and the gradient also by ``spec.sign``.
    """
    if eps is None:
        eps = epsilon_fn(prior, x_t, alpha_bar_t)
    x0 = _check(tweedie(x_t, eps, alpha_bar_t), "tweedie")
    probs = _check(seg_forward(x0, params), "segment")
    loss, cot = _masked_loss_and_cotangent(probs, spec.target_class, spec.direction, spec.masked)
    if not cot.any():
        return np.zeros_like(x_t), loss_scale * loss
    g0 = _check(seg_vjp(x0, params, cot), "seg_vjp")
    # d tweedie / d x_t = (I + (1 - alpha_bar) * Hessian) / sqrt(alpha_bar), symmetric
    hv = _check(score_vjp(prior, x_t, alpha_bar_t, g0), "score_vjp")
    grad = (g0 + (1.0 - alpha_bar_t) * hv) / np.sqrt(alpha_bar_t)
    return spec.sign * loss_scale * grad, loss_scale * loss


def clip_gamma(grad: np.ndarray, eps: np.ndarray, b: float) -> float:
    """Step scale keeping ``||gamma * grad||`` at most ``b * ||eps||``; 1 when already below."""
    if not b > 0:
        raise ValueError("b must be positive")
    g = float(np.linalg.norm(grad))
    cap = b * float(np.linalg.norm(eps))
    return cap / g if g > cap else 1.0


@dataclass(frozen=True)
class StepRecord:
    t: int
    loss: float
    grad_norm: float
    eps_norm: float
    gamma: float
    clipped: bool


def make_guidance(prior, params, spec: GuidanceSpec, log: list | None = None):
    """Guidance callback for :func:`sgr.sampler.reconstruct`; appends a :class:`StepRecord` per step to ``log``."""

    def guide(x_t, alpha_bar_t, eps, t):
        grad, loss = guidance_gradient(x_t, prior, alpha_bar_t, params, spec, eps=eps)
        gamma = clip_gamma(grad, eps, spec.b)
        if log is not None:
            g = float(np.linalg.norm(grad))
            e = float(np.linalg.norm(eps))
            log.append(StepRecord(t, loss, g, e, gamma, g > spec.b * e))
        return grad, gamma

    return guide


@dataclass(frozen=True, eq=False)
class BoundsResult:
    class_index: int
    x_lower: np.ndarray
    x_upper: np.ndarray
    seg_lower: np.ndarray
    seg_upper: np.ndarray
    v_lower: float
    v_upper: float
    extras: dict = field(default_factory=dict)

    @property
    def v_unc(self) -> float:
        return self.v_upper - self.v_lower


def bounded_reconstruct(
    y: Measurement,
    prior: GaussianMixturePrior,
    schedule: DiffusionSchedule,
    cg_cfg: CgConfig,
    params: SegmenterParams,
    c: int,
    seed: int,
    b: float = 0.005,
    masked: bool = True,
    voxel_volume: float = 1.0,
    lower_seed: int | None = None,
    sign: float = 1.0,
    step_logs: dict | None = None,
) -> BoundsResult:
    """Upper- and lower-bound reconstructions for class ``c``.

    The upper chain runs with ``seed`` and the lower one with ``lower_seed``
    (default ``seed + 1``). When ``step_logs`` is a dict, per-step records are
    stored under ``"upper"`` and ``"lower"``.
    """
    if c >= params.n_classes:
        raise ValueError(f"class {c} out of range for {params.n_classes} classes")
    seeds = {"upper": seed, "lower": seed + 1 if lower_seed is None else lower_seed}
    images, labels = {}, {}
    for direction in DIRECTIONS:
        spec = GuidanceSpec(direction, c, b=b, masked=masked, sign=sign)
        records = [] if step_logs is not None else None
        guide = make_guidance(prior, params, spec, records)
        images[direction] = reconstruct(y, prior, schedule, cg_cfg, guidance=guide, seed=seeds[direction])
        labels[direction] = hard_segmentation(seg_forward(images[direction], params))
        if step_logs is not None:
            step_logs[direction] = records
    return BoundsResult(
        class_index=c,
        x_lower=images["lower"],
        x_upper=images["upper"],
        seg_lower=labels["lower"],
        seg_upper=labels["upper"],
        v_lower=class_volume(labels["lower"], c, voxel_volume),
        v_upper=class_volume(labels["upper"], c, voxel_volume),
    )
