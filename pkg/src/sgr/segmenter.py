"""Analytic differentiable segmenter: per-pixel softmax over distances to class intensity centers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

__all__ = [
    "SegmenterParams",
    "params_from_spec",
    "seg_forward",
    "seg_vjp",
    "hard_segmentation",
    "class_volume",
    "segment",
]


@dataclass(frozen=True, eq=False)
class SegmenterParams:
    """Class intensity centers, softmax sharpness and an optional 3x3 smoothing kernel."""

    centers: tuple[float, ...]
    sharpness: float = 100.0
    kernel: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "centers", tuple(float(m) for m in self.centers))
        if len(self.centers) < 2:
            raise ValueError("need at least two classes")
        if not self.sharpness > 0:
            raise ValueError("sharpness must be positive")
        if self.kernel is not None:
            k = np.asarray(self.kernel, dtype=float)
            if k.shape != (3, 3):
                raise ValueError(f"kernel must be 3x3, got {k.shape}")
            if abs(k.sum() - 1.0) > 1e-12:
                raise ValueError("kernel weights must sum to 1")
            object.__setattr__(self, "kernel", k)

    @property
    def n_classes(self) -> int:
        return len(self.centers)


def params_from_spec(spec, sharpness: float = 100.0, kernel=None) -> SegmenterParams:
    """Centers at the midpoints of the phantom intensity bands."""
    return SegmenterParams(centers=spec.band_midpoints, sharpness=sharpness, kernel=kernel)


def _smooth(x, params):
    if params.kernel is None:
        return x
    return ndimage.correlate(x, params.kernel, mode="constant", cval=0.0)


def _smooth_adjoint(g, params):
    if params.kernel is None:
        return g
    return ndimage.correlate(g, params.kernel[::-1, ::-1], mode="constant", cval=0.0)


def _class_probs(xs, params):
    # class-first layout (C, H, W) keeps the reductions over classes contiguous
    dist = xs[None] - np.asarray(params.centers)[:, None, None]
    logits = -params.sharpness * dist**2
    logits -= logits.max(axis=0)
    p = np.exp(logits)
    p /= p.sum(axis=0)
    return p, dist


def seg_forward(x: np.ndarray, params: SegmenterParams) -> np.ndarray:
    """Class probabilities with shape ``(H, W, C)``."""
    p, _ = _class_probs(_smooth(np.asarray(x, dtype=float), params), params)
    return np.moveaxis(p, 0, -1)


def seg_vjp(x: np.ndarray, params: SegmenterParams, cotangent: np.ndarray) -> np.ndarray:
    """Gradient of ``<seg_forward(x), cotangent>`` with respect to ``x``."""
    p, dist = _class_probs(_smooth(np.asarray(x, dtype=float), params), params)
    cot = np.moveaxis(cotangent, -1, 0)
    g_logits = p * (cot - (p * cot).sum(axis=0))
    g_xs = (-2.0 * params.sharpness) * (g_logits * dist).sum(axis=0)
    return _smooth_adjoint(g_xs, params)


def hard_segmentation(probs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, so ties go to the smaller class index
    return np.argmax(probs, axis=-1)


def segment(x: np.ndarray, params: SegmenterParams) -> np.ndarray:
    return hard_segmentation(seg_forward(x, params))


def class_volume(labels: np.ndarray, c: int, voxel_volume: float = 1.0) -> float:
    return float(np.count_nonzero(labels == c)) * voxel_volume
