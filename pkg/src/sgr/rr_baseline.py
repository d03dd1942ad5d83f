"""Repeated-reconstruction baseline: unguided posterior samples, volume extremes per class."""

from __future__ import annotations

import logging

import numpy as np

from .cg import CgConfig, NumericalFailure
from .guidance import BoundsResult
from .sampler import reconstruct
from .segmenter import class_volume, segment

log = logging.getLogger(__name__)

__all__ = ["DEFAULT_N_SAMPLES", "select_extremes", "draw_samples", "repeated_reconstruction", "bounds_from_samples"]

DEFAULT_N_SAMPLES = 16


def select_extremes(volumes) -> tuple[int, int]:
    """Indices of the smallest and largest volume; ties go to the lowest index."""
    v = np.asarray(volumes, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("need a nonempty 1D sequence of volumes")
    # argmin/argmax return the first occurrence
    return int(np.argmin(v)), int(np.argmax(v))


def draw_samples(y, prior, schedule, cg_cfg, n_samples, seed, sampler=reconstruct):
    """Run ``n_samples`` unguided chains with seeds ``seed + i``; failed chains are dropped."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    images = []
    for i in range(n_samples):
        try:
            images.append(sampler(y, prior, schedule, cg_cfg, seed=seed + i))
        except NumericalFailure as exc:
            log.warning("chain %d (seed %d) failed: %s", i, seed + i, exc)
    if len(images) < 2:
        raise NumericalFailure(f"only {len(images)} of {n_samples} chains survived", stage="rr")
    return images


def bounds_from_samples(images, params, c: int, voxel_volume: float = 1.0) -> BoundsResult:
    labels = [segment(x, params) for x in images]
    volumes = [class_volume(l, c, voxel_volume) for l in labels]
    lo, hi = select_extremes(volumes)
    return BoundsResult(
        class_index=c,
        x_lower=images[lo],
        x_upper=images[hi],
        seg_lower=labels[lo],
        seg_upper=labels[hi],
        v_lower=volumes[lo],
        v_upper=volumes[hi],
        extras={"volumes": volumes, "lower_index": lo, "upper_index": hi},
    )


def repeated_reconstruction(
    y,
    prior,
    schedule,
    cg_cfg: CgConfig,
    params,
    c: int,
    seed: int,
    n_samples: int = DEFAULT_N_SAMPLES,
    voxel_volume: float = 1.0,
    sampler=reconstruct,
) -> BoundsResult:
    """Bounds for class ``c`` from the lowest- and highest-volume of ``n_samples`` samples.

    ``sampler(y, prior, schedule, cg_cfg, seed=...)`` draws one reconstruction;
    it defaults to the unguided sampler and can be swapped out in tests.
    """
    images = draw_samples(y, prior, schedule, cg_cfg, n_samples, seed, sampler)
    return bounds_from_samples(images, params, c, voxel_volume)
