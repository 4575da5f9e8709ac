"""Polynomial weights, smooth cutoffs, weighted norms and empirical operator bounds.

Weights ``w(x) = (1 + |x - c|)^(-gamma)`` are evaluated in the fundamental
domain without periodization: they model decay at spatial infinity, which a
periodized weight would destroy.  All integrals use the rectangle rule on
the uniform grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d

from .mollifier import Kernel, mollify
from .spectral import Field, Grid, ScalarField, VectorField, gradient, riesz

# sup |d/dr phi| for the transition profile below, so |grad phi_R| <= CUTOFF_GRADIENT_BOUND / R
CUTOFF_GRADIENT_BOUND = 2.0


@dataclass(frozen=True)
class Weight:
    gamma: float
    reg_epsilon: float = 0.0
    center: tuple[float, float, float] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 3.0:
            raise ValueError(f"weight exponent must lie in [0, 3), got {self.gamma!r}")
        if self.reg_epsilon < 0:
            raise ValueError("reg_epsilon must be nonnegative")

    def profile(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.gamma == 0:
            return np.ones_like(r)
        if self.reg_epsilon > 0:
            r = np.sqrt(self.reg_epsilon**2 + r**2)
        return (1.0 + r) ** (-self.gamma)

    def center_on(self, grid: Grid) -> tuple[float, float, float]:
        return grid.center if self.center is None else tuple(self.center)


def _smooth_step(t: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)

    def psi(s):
        safe = np.where(s > 0, s, 1.0)
        return np.where(s > 0, np.exp(-1.0 / safe), 0.0)

    a, b = psi(t), psi(1.0 - t)
    return a / (a + b)


@dataclass(frozen=True)
class Cutoff:
    """``phi_R``: 1 on ``|x - c| <= R``, 0 on ``|x - c| >= 2R``, smooth between."""

    radius: float
    center: tuple[float, float, float] | None = None

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError("cutoff radius must be positive")

    def profile(self, r: np.ndarray) -> np.ndarray:
        return _smooth_step(2.0 - np.asarray(r, dtype=float) / self.radius)

    def center_on(self, grid: Grid) -> tuple[float, float, float]:
        return grid.center if self.center is None else tuple(self.center)


def weight_field(w: Weight, g: Grid) -> ScalarField:
    return ScalarField(g, physical=w.profile(g.distance_to(w.center_on(g))))


def cutoff_field(c: Cutoff, g: Grid) -> ScalarField:
    center = np.asarray(c.center_on(g))
    room = float(np.min(np.minimum(center, g.box_length - center)))
    if 2.0 * c.radius > room:
        raise ValueError(
            f"cutoff support 2R = {2 * c.radius:.6g} exceeds the distance {room:.6g} "
            "from its center to the box boundary"
        )
    return ScalarField(g, physical=c.profile(g.distance_to(c.center_on(g))))


def pointwise_magnitude(f: Field) -> np.ndarray:
    a = f.physical
    if f.rank == 0:
        return np.abs(a)
    return np.sqrt(np.sum(a.reshape((-1,) + f.grid.shape) ** 2, axis=0))


def weighted_lp_norm(f: Field, p: float, w: Weight) -> float:
    if p < 1:
        raise ValueError(f"Lebesgue exponent must be >= 1, got {p!r}")
    g = f.grid
    wv = weight_field(w, g).physical
    total = float(np.sum(pointwise_magnitude(f) ** p * wv) * g.cell_volume)
    return total ** (1.0 / p)


def sobolev_embedding_ratio(f: ScalarField, delta: float) -> float:
    """``||f||_{L^6_{w_{3 delta}}} / (||f||_{L^2_{w_delta}} + ||grad f||_{L^2_{w_delta}})``."""
    w = Weight(delta)
    den = weighted_lp_norm(f, 2, w) + weighted_lp_norm(gradient(f), 2, w)
    if den == 0:
        raise ZeroDivisionError("embedding ratio undefined for the zero field")
    return weighted_lp_norm(f, 6, Weight(3 * delta)) / den


def dyadic_radii(g: Grid) -> list[int]:
    """Cube half-widths, in grid cells, of the dyadic family ``h, 2h, ..., L/4``."""
    radii, r = [], 1
    while r * g.h <= 0.25 * g.box_length * (1 + 1e-12):
        radii.append(r)
        r *= 2
    return radii


def cube_average(a: np.ndarray, half_width: int) -> np.ndarray:
    """Periodic average over the cube of ``(2 r + 1)^3`` points centred at each point."""
    out = a
    for axis in range(3):
        out = uniform_filter1d(out, size=2 * half_width + 1, axis=axis, mode="wrap")
    return out


def maximal_function(f: Field) -> ScalarField:
    a = pointwise_magnitude(f)
    out = np.zeros_like(a)
    for r in dyadic_radii(f.grid):
        np.maximum(out, cube_average(a, r), out=out)
    return ScalarField(f.grid, physical=out)


def kernel_domination_constant(k: Kernel) -> float:
    """Certified ``C`` with ``|f * theta| <= C * M f`` at every grid point.

    Layer-cake decomposition of the sampled kernel: each superlevel set lies
    in the cube whose half-width is its Chebyshev radius, rounded up to the
    next dyadic radius, and contributes ``(level drop) * h^3 * #cube``.
    """
    g = k.grid
    n = g.n_per_axis
    idx = np.abs(np.fft.fftfreq(n, 1.0 / n)).astype(int)
    cheb = np.maximum(np.maximum(idx[:, None, None], idx[None, :, None]), idx[None, None, :])
    vals = k.samples.ravel()
    cheb = cheb.ravel()
    pos = vals > 0
    vals, cheb = vals[pos], cheb[pos]
    order = np.argsort(-vals, kind="stable")
    vals, cheb = vals[order], cheb[order]
    levels, first = np.unique(-vals, return_index=True)
    levels = -levels
    reach = np.maximum.accumulate(cheb)
    radii = dyadic_radii(g)
    total = 0.0
    for i, v in enumerate(levels):
        nxt = levels[i + 1] if i + 1 < len(levels) else 0.0
        end = first[i + 1] - 1 if i + 1 < len(levels) else len(vals) - 1
        rho = reach[end]
        fits = [r for r in radii if r >= rho]
        if not fits:
            raise ValueError("kernel support exceeds the largest dyadic cube")
        total += (v - nxt) * g.cell_volume * (2 * fits[0] + 1) ** 3
    return total


def _apply(op, f: ScalarField) -> Field:
    if isinstance(op, Kernel):
        return mollify(f, op)
    if op == "maximal":
        return maximal_function(f)
    if isinstance(op, str) and op.startswith("riesz_"):
        axis = int(op.split("_", 1)[1])
        if axis not in (0, 1, 2):
            raise ValueError(f"unknown Riesz axis in {op!r}")
        return riesz(f, axis)
    raise ValueError(f"unsupported operator {op!r}")


def operator_weighted_ratio(op, f: ScalarField, p: float, delta: float) -> float:
    """``||op f||_{L^p_{w_delta}} / ||f||_{L^p_{w_delta}}``.

    ``op`` is ``"riesz_0"``, ``"riesz_1"``, ``"riesz_2"``, ``"maximal"`` or a
    :class:`Kernel` (convolution; kernels carry unit mass so no extra factor).
    """
    if not (1 < p < math.inf):
        raise ValueError(f"p must lie in (1, inf), got {p!r}")
    if not 0 <= delta < 3:
        raise ValueError(f"delta must lie in [0, 3), got {delta!r}")
    w = Weight(delta)
    den = weighted_lp_norm(f, p, w)
    if den == 0:
        raise ZeroDivisionError("ratio undefined for the zero field")
    return weighted_lp_norm(_apply(op, f), p, w) / den


def l3_weighted_cubed(v: VectorField, w: Weight) -> float:
    return weighted_lp_norm(v, 3, w) ** 3
