"""Synthetic labeled phantoms and the analytic Gaussian-mixture image prior.

The prior replaces a trained noise-prediction network: for a mixture
``p(x0) = sum_k w_k N(x0; mu_k, sigma^2 I)`` the diffused marginal is again a
mixture, so the score, the epsilon-prediction and the score Jacobian are all
available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConfigurationError",
    "Shape",
    "ClassSpec",
    "PhantomSpec",
    "Phantom",
    "GaussianMixturePrior",
    "generate_phantom",
    "build_prior",
    "log_density",
    "responsibilities",
    "score_t",
    "epsilon_fn",
    "score_vjp",
    "default_phantom_spec",
]


class ConfigurationError(ValueError):
    """Raised for an invalid phantom or experiment configuration."""


@dataclass(frozen=True)
class Shape:
    """Filled ellipse, or an annulus when ``inner_radii`` is given.

    Coordinates are in pixels, ``(row, col)`` order. Jitter values are the
    half-widths of uniform perturbations applied per phantom draw.
    """

    center: tuple[float, float]
    radii: tuple[float, float]
    inner_radii: tuple[float, float] | None = None
    center_jitter: float = 0.0
    radius_jitter: float = 0.0

    @property
    def kind(self) -> str:
        return "ellipse" if self.inner_radii is None else "annulus"


@dataclass(frozen=True)
class ClassSpec:
    name: str
    band: tuple[float, float]
    shapes: tuple[Shape, ...] = ()
    # fraction of the band half-width used for the per-phantom intensity draw
    intensity_jitter: float = 0.0


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry and intensity description of a phantom family.

    Class 0 is the background; its shapes (if any) are ignored. Classes are
    painted in index order so later classes overwrite earlier ones.
    """

    height: int
    width: int
    classes: tuple[ClassSpec, ...]
    voxel_volume: float = 1.0

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def validate(self) -> None:
        if self.height < 16 or self.width < 16:
            raise ConfigurationError(f"grid must be at least 16x16, got {self.height}x{self.width}")
        if self.n_classes < 2:
            raise ConfigurationError(f"need at least 2 classes, got {self.n_classes}")
        if not self.voxel_volume > 0:
            raise ConfigurationError("voxel_volume must be positive")
        for cls in self.classes:
            lo, hi = cls.band
            if not lo <= hi:
                raise ConfigurationError(f"class {cls.name!r} has an empty intensity band")
            if not 0.0 <= cls.intensity_jitter <= 1.0:
                raise ConfigurationError(f"class {cls.name!r}: intensity_jitter must lie in [0, 1]")
        bands = sorted((c.band, c.name) for c in self.classes)
        for ((_, hi), a), ((lo, _), b) in zip(bands, bands[1:]):
            if lo <= hi:
                raise ConfigurationError(f"intensity bands of {a!r} and {b!r} overlap")

    @property
    def band_midpoints(self) -> tuple[float, ...]:
        return tuple(0.5 * (c.band[0] + c.band[1]) for c in self.classes)


@dataclass(frozen=True, eq=False)
class Phantom:
    image: np.ndarray
    labels: np.ndarray
    voxel_volume: float = 1.0

    def __post_init__(self):
        if self.image.shape != self.labels.shape:
            raise ValueError(f"image {self.image.shape} and labels {self.labels.shape} differ")
        if not self.voxel_volume > 0:
            raise ValueError("voxel_volume must be positive")


def default_phantom_spec(size: int = 64, jitter_scale: float = 1.0) -> PhantomSpec:
    """Knee-like three-class phantom: background, soft tissue, thin cartilage ring.

    ``jitter_scale`` multiplies the geometric jitter (center and radii).
    """
    if jitter_scale < 0:
        raise ConfigurationError("jitter_scale must be nonnegative")
    s = size / 64.0
    j = s * jitter_scale
    c = (size / 2 - 0.5, size / 2 - 0.5)
    return PhantomSpec(
        height=size,
        width=size,
        classes=(
            ClassSpec("background", (0.0, 0.1), intensity_jitter=0.5),
            ClassSpec(
                "tissue",
                (0.35, 0.5),
                (Shape(c, (22 * s, 18 * s), center_jitter=0.6 * j, radius_jitter=0.9 * j),),
                intensity_jitter=0.5,
            ),
            ClassSpec(
                "cartilage",
                (0.8, 0.95),
                (
                    Shape(
                        c,
                        (13 * s, 11 * s),
                        inner_radii=(9 * s, 7 * s),
                        center_jitter=0.6 * j,
                        radius_jitter=0.6 * j,
                    ),
                ),
                intensity_jitter=0.5,
            ),
        ),
    )


def _rasterize(shape: Shape, rows: np.ndarray, cols: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cy, cx = shape.center
    if shape.center_jitter:
        cy += rng.uniform(-shape.center_jitter, shape.center_jitter)
        cx += rng.uniform(-shape.center_jitter, shape.center_jitter)

    def jitter(radii):
        ry, rx = radii
        if shape.radius_jitter:
            ry += rng.uniform(-shape.radius_jitter, shape.radius_jitter)
            rx += rng.uniform(-shape.radius_jitter, shape.radius_jitter)
        return max(ry, 0.5), max(rx, 0.5)

    ry, rx = jitter(shape.radii)
    inside = ((rows - cy) / ry) ** 2 + ((cols - cx) / rx) ** 2 <= 1.0
    if shape.inner_radii is not None:
        iy, ix = jitter(shape.inner_radii)
        iy, ix = min(iy, ry - 0.5), min(ix, rx - 0.5)
        if iy > 0 and ix > 0:
            inside &= ((rows - cy) / iy) ** 2 + ((cols - cx) / ix) ** 2 > 1.0
    return inside


def generate_phantom(spec: PhantomSpec, seed: int) -> Phantom:
    """Draw one phantom; a pure function of ``(spec, seed)``."""
    spec.validate()
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[: spec.height, : spec.width].astype(float)
    labels = np.zeros((spec.height, spec.width), dtype=np.int64)
    for c, cls in enumerate(spec.classes[1:], start=1):
        for shape in cls.shapes:
            labels[_rasterize(shape, rows, cols, rng)] = c

    image = np.empty((spec.height, spec.width))
    for c, cls in enumerate(spec.classes):
        lo, hi = cls.band
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        level = mid + cls.intensity_jitter * half * rng.uniform(-1.0, 1.0)
        image[labels == c] = level
    return Phantom(image=image, labels=labels, voxel_volume=spec.voxel_volume)


@dataclass(frozen=True, eq=False)
class GaussianMixturePrior:
    """Mixture ``sum_k w_k N(mu_k, variance * I)`` over image grids.

    ``means`` has shape ``(K, H, W)``.
    """

    weights: np.ndarray
    means: np.ndarray
    variance: float
    _flat: np.ndarray = field(init=False, repr=False)
    _sqnorms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        if mu.ndim != 3:
            raise ValueError(f"means must have shape (K, H, W), got {mu.shape}")
        if w.shape != (mu.shape[0],):
            raise ValueError("one weight per mixture component required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if not self.variance > 0:
            raise ValueError("variance must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        flat = mu.reshape(mu.shape[0], -1)
        object.__setattr__(self, "_flat", flat)
        object.__setattr__(self, "_sqnorms", np.einsum("kd,kd->k", flat, flat))

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.means.shape[1:]


def build_prior(templates: list[Phantom], variance: float = 1e-4) -> GaussianMixturePrior:
    if not templates:
        raise ValueError("at least one template phantom is required")
    shapes = {t.image.shape for t in templates}
    if len(shapes) != 1:
        raise ValueError(f"templates disagree in shape: {sorted(shapes)}")
    k = len(templates)
    means = np.stack([t.image for t in templates])
    return GaussianMixturePrior(weights=np.full(k, 1.0 / k), means=means, variance=variance)


def _diffusion_params(prior: GaussianMixturePrior, alpha_bar_t: float) -> tuple[float, float]:
    if not 0.0 < alpha_bar_t <= 1.0:
        raise ValueError(f"alpha_bar_t must lie in (0, 1], got {alpha_bar_t}")
    scale = np.sqrt(alpha_bar_t)
    var = alpha_bar_t * prior.variance + (1.0 - alpha_bar_t)
    return scale, var


def _log_terms(prior, x, alpha_bar_t):
    scale, var = _diffusion_params(prior, alpha_bar_t)
    if x.shape != prior.shape:
        raise ValueError(f"x has shape {x.shape}, prior expects {prior.shape}")
    xf = x.ravel()
    # ||x - a mu_k||^2 expanded; the cancellation error is far below the FD tolerances used
    sq = xf @ xf - 2.0 * scale * (prior._flat @ xf) + alpha_bar_t * prior._sqnorms
    with np.errstate(divide="ignore"):
        logits = np.log(prior.weights) - sq / (2.0 * var)
    return logits, scale, var


def responsibilities(prior: GaussianMixturePrior, x_t: np.ndarray, alpha_bar_t: float) -> np.ndarray:
    """Posterior component probabilities given a noisy image."""
    logits, _, _ = _log_terms(prior, x_t, alpha_bar_t)
    logits -= logits.max()
    r = np.exp(logits)
    return r / r.sum()


def log_density(prior: GaussianMixturePrior, x_t: np.ndarray, alpha_bar_t: float) -> float:
    """Normalized ``log q_t(x_t)`` of the diffused mixture."""
    logits, _, var = _log_terms(prior, x_t, alpha_bar_t)
    top = logits.max()
    d = x_t.size
    return float(top + np.log(np.exp(logits - top).sum()) - 0.5 * d * np.log(2 * np.pi * var))


# components below this responsibility are skipped in the weighted sums; their total
# contribution is under K * 1e-17 of the result
_ACTIVE_CUTOFF = 1e-17


def _active(prior, r):
    keep = np.flatnonzero(r > _ACTIVE_CUTOFF)
    if keep.size == r.size:
        return r, prior._flat
    return r[keep], prior._flat[keep]


def score_t(prior: GaussianMixturePrior, x_t: np.ndarray, alpha_bar_t: float) -> np.ndarray:
    """Gradient of ``log q_t`` at ``x_t``."""
    r, means = _active(prior, responsibilities(prior, x_t, alpha_bar_t))
    scale, var = _diffusion_params(prior, alpha_bar_t)
    mean = (r @ means).reshape(prior.shape)
    return (scale * mean - x_t) / var


def epsilon_fn(prior: GaussianMixturePrior, x_t: np.ndarray, alpha_bar_t: float) -> np.ndarray:
    return -np.sqrt(1.0 - alpha_bar_t) * score_t(prior, x_t, alpha_bar_t)


def score_vjp(
    prior: GaussianMixturePrior, x_t: np.ndarray, alpha_bar_t: float, cotangent: np.ndarray
) -> np.ndarray:
    """Hessian-vector product of ``log q_t``; the Hessian is symmetric so this is also the VJP.

    ``H = -I / v + (a^2 / v^2) Cov_r[mu]`` with ``a = sqrt(alpha_bar)``,
    ``v = alpha_bar * sigma^2 + 1 - alpha_bar`` and ``r`` the responsibilities.
    """
    r, means = _active(prior, responsibilities(prior, x_t, alpha_bar_t))
    scale, var = _diffusion_params(prior, alpha_bar_t)
    # Cov_r[mu] v = sum_k r_k mu_k <mu_k, v> - mean <mean, v>
    proj = means @ cotangent.ravel()
    weighted, mean = np.stack([r * proj, r]) @ means
    cov_v = (weighted - mean * (r @ proj)).reshape(prior.shape)
    return -cotangent / var + (scale**2 / var**2) * cov_v
