"""Single-coil Cartesian forward model: unitary 2D DFT followed by column masking.

k-space is stored centered (``fftshift`` applied), so column ``j`` of a
measurement holds horizontal frequency ``j - W // 2``.

Images are real. A real image has Hermitian-symmetric k-space, so sampling
column ``f`` also determines column ``-f``. The real normal operator and the
hard data-consistency projection both use this closure.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

__all__ = [
    "SamplingMask",
    "Measurement",
    "make_mask",
    "default_acs_count",
    "forward",
    "adjoint",
    "normal_operator",
    "hard_data_consistency",
    "hermitian_mirror",
]


@dataclass(frozen=True, eq=False)
class SamplingMask:
    columns_kept: np.ndarray
    acceleration: float
    acs_count: int

    def __post_init__(self):
        cols = np.asarray(self.columns_kept, dtype=bool)
        if cols.ndim != 1:
            raise ValueError("columns_kept must be a 1D boolean vector")
        object.__setattr__(self, "columns_kept", cols)
        if not cols[_acs_slice(cols.size, self.acs_count)].all():
            raise ValueError("ACS block is not fully sampled")
        kept = int(cols.sum())
        if kept == 0 or abs(cols.size / kept - self.acceleration) > 0.1 * self.acceleration:
            raise ValueError(
                f"{kept} of {cols.size} columns kept is inconsistent with acceleration {self.acceleration}"
            )

    @property
    def width(self) -> int:
        return self.columns_kept.size

    @property
    def n_kept(self) -> int:
        return int(self.columns_kept.sum())

    def closure(self) -> np.ndarray:
        """Columns known for a real image: kept columns plus their mirrors."""
        return self.columns_kept | _mirror_columns(self.columns_kept)


@dataclass(frozen=True, eq=False)
class Measurement:
    kspace: np.ndarray
    mask: SamplingMask

    def __post_init__(self):
        if self.kspace.ndim != 2 or self.kspace.shape[1] != self.mask.width:
            raise ValueError(f"k-space {self.kspace.shape} does not match mask width {self.mask.width}")
        if np.any(self.kspace[:, ~self.mask.columns_kept] != 0):
            raise ValueError("k-space must be zero on unsampled columns")

    @property
    def shape(self) -> tuple[int, int]:
        return self.kspace.shape


def default_acs_count(width: int) -> int:
    return max(2, width // 32)


def _acs_slice(width: int, acs_count: int) -> slice:
    start = width // 2 - acs_count // 2
    return slice(start, start + acs_count)


def _mirror_index(n: int) -> np.ndarray:
    # centered index j holds frequency j - n // 2; its mirror holds the negated frequency
    freq = np.arange(n) - n // 2
    return (-freq + n // 2) % n


def _mirror_columns(cols: np.ndarray) -> np.ndarray:
    return cols[_mirror_index(cols.size)]


def hermitian_mirror(kspace: np.ndarray) -> np.ndarray:
    """``K(-u, -v)^*`` for centered k-space; equals ``K`` when the image is real."""
    h, w = kspace.shape
    return np.conj(kspace[np.ix_(_mirror_index(h), _mirror_index(w))])


def make_mask(width: int, acceleration: float, acs_count: int | None = None, seed: int = 0) -> SamplingMask:
    """Random column mask with a fully sampled center block.

    ``round(width / acceleration)`` columns are kept; the ``acs_count``
    central ones always, the rest drawn uniformly without replacement.
    """
    if acceleration < 1:
        raise ValueError(f"acceleration must be >= 1, got {acceleration}")
    if acs_count is None:
        acs_count = default_acs_count(width)
    budget = int(round(width / acceleration))
    if acs_count < 0 or acs_count > width / acceleration or budget < max(acs_count, 1):
        raise ValueError(f"acs_count={acs_count} infeasible for width {width} at {acceleration}x")
    cols = np.zeros(width, dtype=bool)
    cols[_acs_slice(width, acs_count)] = True
    rng = np.random.default_rng(seed)
    free = np.flatnonzero(~cols)
    cols[rng.choice(free, size=budget - acs_count, replace=False)] = True
    return SamplingMask(columns_kept=cols, acceleration=float(acceleration), acs_count=acs_count)


def _fft(x: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft2(x, norm="ortho"))


def _ifft(k: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(np.fft.ifftshift(k), norm="ortho")


def forward(x: np.ndarray, mask: SamplingMask) -> Measurement:
    if x.ndim != 2 or x.shape[1] != mask.width:
        raise ValueError(f"image {x.shape} does not match mask width {mask.width}")
    k = _fft(x)
    k[:, ~mask.columns_kept] = 0
    return Measurement(kspace=k, mask=mask)


def adjoint(y: Measurement, real: bool = False) -> np.ndarray:
    """``F^-1 M y``; with ``real=True`` the real part, the discarded imaginary norm is logged."""
    x = _ifft(np.where(y.mask.columns_kept, y.kspace, 0))
    if not real:
        return x
    log.debug("adjoint: discarded imaginary residual %.3e", np.linalg.norm(x.imag))
    return x.real.copy()


def normal_operator(mask: SamplingMask):
    """``x -> A*A x``; for real input the real part is returned (real-image convention)."""
    cols = mask.columns_kept
    w = cols.size
    # Re(F^-1 M F x) = F^-1 ((M + mirror(M)) / 2) F x for real x, which rfft2 evaluates directly
    freqs = np.arange(w // 2 + 1)
    half_weight = 0.5 * (cols[(freqs + w // 2) % w].astype(float) + cols[(-freqs + w // 2) % w])

    def apply(x: np.ndarray) -> np.ndarray:
        if np.isrealobj(x):
            return np.fft.irfft2(half_weight * np.fft.rfft2(x, norm="ortho"), s=x.shape, norm="ortho")
        k = _fft(x)
        k[:, ~cols] = 0
        return _ifft(k)

    return apply


def hard_data_consistency(x: np.ndarray, y: Measurement) -> np.ndarray:
    """Project ``x`` onto ``{x' : A x' = y}``.

    Sampled coefficients are replaced by ``y``, unsampled ones kept. For real
    ``x`` the mirrored columns are set from ``conj(y)`` too, which keeps the
    result real and is the nearest real consistent image.
    """
    if x.shape != y.shape:
        raise ValueError(f"image {x.shape} and measurement {y.shape} differ")
    k = _fft(x)
    cols = y.mask.columns_kept
    if np.isrealobj(x):
        mirrored = hermitian_mirror(np.where(cols, y.kspace, 0))
        known = y.mask.closure() & ~cols
        k[:, known] = mirrored[:, known]
        k[:, cols] = y.kspace[:, cols]
        return _ifft(k).real
    k[:, cols] = y.kspace[:, cols]
    return _ifft(k)
