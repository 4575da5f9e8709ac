"""Radial smoothing kernels and spectral convolution with them.

The mother kernel ``theta`` is supported in the unit ball.  ``theta_eps`` is
its dilation to support radius ``eps``; the time-scaled family uses radius
``eps * sqrt(t)``.  Kernels are sampled at minimum-image distances from the
origin, normalized to unit discrete mass, and applied as Fourier multipliers
(the DFT of the samples), so the spectral product is exactly the discrete
circular convolution with the sampled kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .spectral import Field, Grid, forward

KERNEL_SHAPES = ("gaussian_bump", "polynomial_bump")

# Gaussian standard deviation in units of the support radius (truncation at 6 sigma).
GAUSSIAN_SIGMA = 1.0 / 6.0
POLYNOMIAL_POWER = 4


class UnderResolvedKernelError(ValueError):
    """The requested kernel scale does not reach the nearest grid neighbours."""


def mother_profile(shape: str, r: np.ndarray) -> np.ndarray:
    """Unnormalized radial profile on ``[0, 1]``, zero outside."""
    r = np.asarray(r, dtype=float)
    inside = r < 1.0
    if shape == "gaussian_bump":
        vals = np.exp(-0.5 * (r / GAUSSIAN_SIGMA) ** 2)
    elif shape == "polynomial_bump":
        vals = np.clip(1.0 - r**2, 0.0, None) ** POLYNOMIAL_POWER
    else:
        raise ValueError(f"unknown kernel shape {shape!r}; expected one of {KERNEL_SHAPES}")
    return np.where(inside, vals, 0.0)


def _check_scale(scale: float, grid: Grid) -> None:
    if not scale > 0:
        raise ValueError(f"kernel scale must be positive, got {scale!r}")
    if scale <= grid.h:
        raise UnderResolvedKernelError(
            f"kernel radius {scale:.6g} does not exceed the grid spacing {grid.h:.6g}; "
            "the sampled kernel would collapse to a point mass"
        )
    if scale >= 0.5 * grid.box_length:
        # the support ball would overlap its own periodic images
        raise ValueError(
            f"kernel radius {scale:.6g} must stay below half the box ({grid.box_length / 2:.6g})"
        )


@lru_cache(maxsize=64)
def _sampled(shape: str, scale: float, grid: Grid) -> tuple[np.ndarray, np.ndarray, float]:
    raw = mother_profile(shape, grid.periodic_radius / scale)
    mass = float(np.sum(raw) * grid.cell_volume)
    samples = raw / mass
    multiplier = forward(samples) * grid.volume
    multiplier.setflags(write=False)
    samples.setflags(write=False)
    return samples, multiplier, 1.0 / mass


@dataclass(frozen=True)
class Kernel:
    """Sampled unit-mass kernel ``theta_eps`` on a grid."""

    shape: str
    epsilon: float
    grid: Grid
    samples: np.ndarray = field(repr=False, compare=False)
    multiplier: np.ndarray = field(repr=False, compare=False)
    normalization: float = field(compare=False)

    @property
    def mass(self) -> float:
        return float(np.sum(self.samples) * self.grid.cell_volume)


def make_kernel(shape: str, epsilon: float, grid: Grid) -> Kernel:
    _check_scale(epsilon, grid)
    samples, multiplier, norm = _sampled(shape, float(epsilon), grid)
    kernel = Kernel(shape, float(epsilon), grid, samples, multiplier, norm)
    if np.any(samples < 0) or abs(kernel.mass - 1.0) > 1e-10:
        raise AssertionError("kernel construction violated positivity or unit mass")
    return kernel


def kernel_multiplier(shape: str, scale: float, grid: Grid, *, check: bool = True) -> np.ndarray:
    """Fourier multiplier of the sampled kernel at support radius ``scale``.

    With ``check=False`` scales at or below the grid spacing are accepted and
    give the identity multiplier (the sampled kernel is a point mass).
    """
    if check:
        _check_scale(scale, grid)
    elif scale <= grid.h:
        return np.ones(grid.spectral_shape)
    return _sampled(shape, float(scale), grid)[1]


def mollify(f: Field, k: Kernel) -> Field:
    if f.grid != k.grid:
        raise ValueError("grid mismatch between field and kernel")
    return f.with_spectral(f.spectral * k.multiplier)


def mollify_time_scaled(f: Field, epsilon: float, t: float, shape: str = "gaussian_bump") -> Field:
    """Convolution with ``theta_{eps,t}``, the kernel at radius ``eps * sqrt(t)``."""
    if not t > 0:
        raise ValueError(f"time must be positive, got {t!r}")
    return mollify(f, make_kernel(shape, epsilon * math.sqrt(t), f.grid))
