"""Shared fixtures-as-functions for the test suite."""

import numpy as np

from sgr.phantom import build_prior, default_phantom_spec, generate_phantom
from sgr.segmenter import params_from_spec


def small_spec(size=32):
    return default_phantom_spec(size)


def random_prior(k, shape=(8, 8), variance=0.05, seed=0):
    """Mixture with random means in [0, 1]; small grids keep finite differences cheap."""
    from sgr.phantom import GaussianMixturePrior

    rng = np.random.default_rng(seed)
    return GaussianMixturePrior(np.full(k, 1.0 / k), rng.random((k, *shape)), variance)


def phantom_prior(k, size=32, variance=5e-3, seed=0):
    spec = small_spec(size)
    return spec, build_prior([generate_phantom(spec, seed * 1000 + i) for i in range(k)], variance)


def smooth_params(spec, sharpness=50.0):
    return params_from_spec(spec, sharpness, np.full((3, 3), 1.0 / 9.0))


def central_difference(f, x, direction, h=1e-5):
    return (f(x + h * direction) - f(x - h * direction)) / (2 * h)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))
