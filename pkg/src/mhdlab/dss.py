"""Discretely self-similar data and the two-box scaling-covariance experiment.

A field is lambda-DSS when ``lam * u(lam * x) = u(x)``; it is determined by a
generator ``g`` on the annulus ``1 < |x| < lam`` through
``u(x) = lam^-n g(lam^-n x)`` with ``n = floor(log_lam |x|)``.  DSS fields
live on centred sampling cubes of R^3, not on the periodic solver grid;
periodicity breaks exact self-similarity, which is why scale covariance of
the solver is checked with two boxes of sides ``L`` and ``L / lam``.

With ``lam = 2`` every scaling is a power of two, so on dyadic sample
points the construction and the covariance experiment are exact in floating
point arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import map_coordinates

from .initial import Forcing, RescaledForcing
from .spectral import VectorField, forward, inverse


# ---------------------------------------------------------------------------
# generators


def _bump(r, a: float, b: float):
    """Smooth radial bump supported in ``(a, b)``, peak 1; complex-step safe."""
    s = (2.0 * r - (a + b)) / (b - a)
    inside = np.abs(np.real(s)) < 1.0
    s_safe = np.where(inside, s, 0.0)
    return np.where(inside, np.exp(1.0 - 1.0 / (1.0 - s_safe**2)), 0.0)


def _bump_prime(r, a: float, b: float):
    s = (2.0 * r - (a + b)) / (b - a)
    inside = np.abs(np.real(s)) < 1.0
    s_safe = np.where(inside, s, 0.0)
    val = np.exp(1.0 - 1.0 / (1.0 - s_safe**2))
    ds = -2.0 * s_safe / (1.0 - s_safe**2) ** 2
    return np.where(inside, val * ds * 2.0 / (b - a), 0.0)


@dataclass(frozen=True)
class CurlGenerator:
    """``g = curl(chi(|y|) (M y + e))`` with ``chi`` a bump inside the annulus.

    Divergence-free identically; the support is the closed shell
    ``[r_in, r_out]`` strictly inside ``(1, lam)``.
    """

    r_in: float
    r_out: float
    matrix: tuple = ((0.0, -1.0, 0.3), (1.0, 0.0, -0.5), (0.2, 0.7, 0.0))
    shift: tuple = (0.3, -0.2, 0.5)
    amplitude: float = 1.0

    def __call__(self, y: np.ndarray) -> np.ndarray:
        """``y`` has shape ``(3, ...)``; returns ``(3, ...)``."""
        M = np.asarray(self.matrix, dtype=float)
        e = np.asarray(self.shift, dtype=float)
        r = np.sqrt(y[0] ** 2 + y[1] ** 2 + y[2] ** 2)
        r_safe = np.where(np.real(r) > 0, r, 1.0)
        chi = _bump(r, self.r_in, self.r_out)
        dchi = _bump_prime(r, self.r_in, self.r_out) / r_safe
        a = np.tensordot(M, y, axes=(1, 0)) + e.reshape((3,) + (1,) * (y.ndim - 1))
        grad = dchi * y
        cross = np.stack(
            [
                grad[1] * a[2] - grad[2] * a[1],
                grad[2] * a[0] - grad[0] * a[2],
                grad[0] * a[1] - grad[1] * a[0],
            ]
        )
        curl_m = np.array([M[2, 1] - M[1, 2], M[0, 2] - M[2, 0], M[1, 0] - M[0, 1]])
        out = cross + chi * curl_m.reshape((3,) + (1,) * (y.ndim - 1))
        return self.amplitude * out


@dataclass(frozen=True)
class ShellTensorGenerator:
    """``g_F(s, y) = chi(|y|) tau(s) P`` with a log-periodic time profile.

    ``tau`` is specified on ``[1, lam^2)`` and extended log-periodically,
    ``tau(s) = 1 + depth * sin(2 pi log_{lam^2} s)``.
    """

    r_in: float
    r_out: float
    lam: float
    pattern: tuple = ((0.0, 1.0, 0.0), (0.5, 0.0, -0.3), (0.0, 0.2, 0.0))
    depth: float = 0.5
    amplitude: float = 1.0

    def __call__(self, s, y: np.ndarray) -> np.ndarray:
        r = np.sqrt(y[0] ** 2 + y[1] ** 2 + y[2] ** 2)
        chi = _bump(r, self.r_in, self.r_out)
        s = np.asarray(s, dtype=float)
        tau = 1.0 + self.depth * np.sin(2.0 * math.pi * np.log(s) / math.log(self.lam**2))
        P = np.asarray(self.pattern, dtype=float).reshape((3, 3) + (1,) * (y.ndim - 1))
        return self.amplitude * P * (chi * tau)


@dataclass(frozen=True)
class DssGenerator:
    lam: float
    g: object
    g_F: object = None
    support: tuple = (None, None)

    def __post_init__(self) -> None:
        if not self.lam > 1:
            raise ValueError("lambda must exceed 1")
        lo, hi = self.support
        if lo is not None and not (1.0 < lo < hi < self.lam):
            raise ValueError("generator support must lie strictly inside the annulus (1, lambda)")


def standard_generator(lam: float = 2.0, amplitude: float = 1.0, forcing: bool = True) -> DssGenerator:
    margin = 0.1 * (lam - 1.0)
    r_in, r_out = 1.0 + margin, lam - margin
    g = CurlGenerator(r_in, r_out, amplitude=amplitude)
    g_F = ShellTensorGenerator(r_in, r_out, lam, amplitude=amplitude) if forcing else None
    return DssGenerator(lam, g, g_F, (r_in, r_out))


def complex_step_divergence(g, points: np.ndarray, step: float = 1e-30) -> np.ndarray:
    """``div g`` at ``points`` (shape ``(3, ...)``) by complex-step differentiation."""
    total = np.zeros(points.shape[1:])
    for i in range(3):
        z = points.astype(complex)
        z[i] = z[i] + 1j * step
        total += np.imag(g(z)[i]) / step
    return total


# ---------------------------------------------------------------------------
# sampled DSS fields


@dataclass(frozen=True)
class DssBox:
    """Centred sampling cube ``x_j = (j - n/2) h``, ``h = 2 R / n``, with a core excluded."""

    half_width: float
    n: int
    r_core: float | None = None

    def __post_init__(self) -> None:
        if self.n < 4 or self.n % 2:
            raise ValueError("sampling cube needs an even number of points per axis")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        if self.r_core is not None and not self.r_core > 0:
            raise ValueError("r_core must be positive: the origin cannot be sampled")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.n

    @property
    def core(self) -> float:
        return 2.0 * self.h if self.r_core is None else self.r_core

    def axis(self) -> np.ndarray:
        return (np.arange(self.n) - self.n // 2) * self.h

    def rescaled(self, lam: float) -> DssBox:
        return DssBox(self.half_width / lam, self.n, self.core / lam)


@dataclass
class DssField:
    """Samples of a (possibly tensor-valued) field on a :class:`DssBox`; core entries are NaN."""

    lam: float
    box: DssBox
    values: np.ndarray

    @property
    def rank(self) -> int:
        return self.values.ndim - 3

    def rescaled(self, lam: float) -> DssField:
        """``lam u(lam x)`` on the box of half-width ``R / lam``: the same samples times ``lam``."""
        return DssField(self.lam, self.box.rescaled(lam), lam * self.values)

    def radius(self) -> np.ndarray:
        a = self.box.axis()
        return np.sqrt(a[:, None, None] ** 2 + a[None, :, None] ** 2 + a[None, None, :] ** 2)


def _shell_index(r: np.ndarray, lam: float) -> np.ndarray:
    """``floor(log_lam r)`` for ``r > 0``, exact for ``lam = 2``."""
    if lam == 2.0:
        _, e = np.frexp(r)
        return (e - 1).astype(np.int64)
    n = np.floor(np.log(r) / math.log(lam)).astype(np.int64)
    n = np.where(lam ** n.astype(float) > r, n - 1, n)
    n = np.where(lam ** (n + 1).astype(float) <= r, n + 1, n)
    return n


def _evaluate_shells(box: DssBox, lam: float, fn, comps: tuple, slab: int = 16) -> np.ndarray:
    """Fill ``fn(scale, y)`` over the cube slab by slab, NaN inside the core."""
    a = box.axis()
    n = box.n
    out = np.full(comps + (n, n, n), np.nan)
    for start in range(0, n, slab):
        stop = min(n, start + slab)
        x = np.stack(np.meshgrid(a[start:stop], a, a, indexing="ij"))
        r = np.sqrt(x[0] ** 2 + x[1] ** 2 + x[2] ** 2)
        ok = r >= box.core
        r_ok = np.where(ok, r, 1.0)
        k = _shell_index(r_ok, lam)
        scale = np.ldexp(1.0, -k) if lam == 2.0 else lam ** (-k.astype(float))
        vals = fn(scale, x * scale)
        vals = np.where(ok, vals, np.nan)
        out[..., start:stop, :, :] = vals
    return out


def dss_extend(gen: DssGenerator, box: DssBox) -> DssField:
    """``u0(x) = lam^-n g(lam^-n x)``, ``n = floor(log_lam |x|)``, sampled on ``box``."""
    vals = _evaluate_shells(box, gen.lam, lambda s, y: s * gen.g(y), (3,))
    return DssField(gen.lam, box, vals)


def dss_forcing(gen: DssGenerator, t: float, box: DssBox) -> DssField:
    """``F(t, x) = lam^-2n g_F(lam^-2n t, lam^-n x)``, which satisfies ``lam^2 F(lam^2 t, lam x) = F(t, x)``."""
    if gen.g_F is None:
        raise ValueError("generator has no forcing tensor g_F")
    if not t > 0:
        raise ValueError("forcing time must be positive")
    vals = _evaluate_shells(box, gen.lam, lambda s, y: s**2 * gen.g_F(s**2 * t, y), (3, 3))
    return DssField(gen.lam, box, vals)


def dyadic_pairs(box: DssBox, lam: float = 2.0):
    """Index arrays ``J`` and ``2J - n/2``: grid points ``x`` with ``2x`` on the grid."""
    if lam != 2.0:
        raise ValueError("dyadic pairing requires lambda = 2")
    n = box.n
    j = np.arange(n // 4, 3 * n // 4)
    return j, 2 * j - n // 2


def dss_residual(u: DssField, sample_set="dyadic", *, relative: bool = False) -> float:
    """``max |lam u(lam x) - u(x)|`` over the samples (core points skipped).

    ``sample_set="dyadic"`` uses every grid point whose image is a grid
    point (requires ``lam = 2``).  An array of points of shape ``(m, 3)``
    uses tricubic interpolation (``scipy.ndimage.map_coordinates``,
    order 3) at ``x`` and ``lam x``.  With ``relative`` the result is
    divided by the largest sampled magnitude.
    """
    lam = u.lam
    vals = u.values
    if isinstance(sample_set, str):
        if sample_set != "dyadic":
            raise ValueError(f"unknown sample set {sample_set!r}")
        j, j2 = dyadic_pairs(u.box, lam)
        small = vals[..., j[:, None, None], j[None, :, None], j[None, None, :]]
        big = vals[..., j2[:, None, None], j2[None, :, None], j2[None, None, :]]
        diff = lam * big - small
    else:
        pts = np.asarray(sample_set, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("sample points must have shape (m, 3)")
        box = u.box
        lim = box.axis()[-1]
        lo = box.axis()[0]
        for p in (pts, lam * pts):
            if np.any(p < lo) or np.any(p > lim):
                raise ValueError("sample set escapes the sampling box")
        r = np.linalg.norm(pts, axis=1)
        if np.any(r < box.core + 3 * box.h):
            raise ValueError("interpolated samples must stay three cells outside the core")
        filled = np.nan_to_num(vals, nan=0.0)
        flat = filled.reshape((-1,) + filled.shape[-3:])

        def interp(p):
            coords = (p.T - lo) / box.h
            return np.stack([map_coordinates(c, coords, order=3, mode="nearest") for c in flat])

        diff = lam * interp(lam * pts) - interp(pts)
    mag = np.abs(diff.reshape((-1,) + diff.shape[-3:]) if diff.ndim > 2 else diff)
    if diff.ndim > 2:
        mag = np.sqrt(np.nansum(diff.reshape((-1,) + diff.shape[-3:]) ** 2, axis=0))
        mag = np.where(np.isnan(diff.reshape((-1,) + diff.shape[-3:])).any(axis=0), 0.0, mag)
    else:
        mag = np.sqrt(np.sum(diff**2, axis=0))
    res = float(np.max(mag)) if mag.size else 0.0
    if relative:
        scale = float(np.nanmax(np.abs(vals)))
        return res / scale if scale > 0 else 0.0
    return res


def shell_contributions(u: DssField, gamma: float, radii) -> np.ndarray:
    """Squared ``L^2_{w_gamma}`` mass of ``u`` in each shell ``radii[i] <= |x| < radii[i+1]``."""
    r = u.radius()
    sq = np.nansum(u.values.reshape((-1,) + r.shape) ** 2, axis=0)
    dens = sq * (1.0 + r) ** (-gamma) * u.box.h**3
    edges = np.asarray(radii, dtype=float)
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (r >= lo) & (r < hi) & (r >= u.box.core)
        out.append(float(np.sum(dens[sel])))
    return np.array(out)


def dss_weighted_norm_study(u: DssField, gamma_list, R_list) -> dict:
    """Weighted norms over growing balls, shell increments and their ratios.

    For ``R_list`` in geometric progression with ratio ``lam`` the
    increments are per-shell contributions, whose ratio tends to
    ``lam^(1 - gamma)``: convergent for ``gamma > 1``, divergent below.
    """
    R = [float(x) for x in R_list]
    if any(b <= a for a, b in zip(R, R[1:])):
        raise ValueError("R_list must be increasing")
    lim = u.box.half_width
    if R[-1] > lim * (1 + 1e-12):
        raise ValueError("largest radius exceeds the sampling box")
    report = {"R_list": R, "lambda": u.lam, "gammas": {}}
    for gamma in gamma_list:
        shells = shell_contributions(u, float(gamma), [u.box.core] + R)
        norms = np.sqrt(np.cumsum(shells))
        increments = shells[1:]
        ratios = [
            float(increments[i + 1] / increments[i]) if increments[i] > 0 else float("nan")
            for i in range(len(increments) - 1)
        ]
        finite_ratios = [x for x in ratios if math.isfinite(x)]
        report["gammas"][float(gamma)] = {
            "norms": [float(x) for x in norms],
            "increments": [float(x) for x in increments],
            "ratios": ratios,
            "expected_ratio": float(u.lam ** (1.0 - gamma)),
            "converges": bool(finite_ratios) and max(finite_ratios) < 1.0,
        }
    return report


def dss_initial_data(gen: DssGenerator, grid, radius: float | None = None) -> np.ndarray:
    """Physical samples of ``phi_R u0`` on the periodic grid, centred in the box.

    The DSS field is cut off by the smooth ``phi_R`` (default ``R = L / 4``,
    so the support ``2R`` fits in the box) and its core ``|x| < 2h`` is
    zeroed; callers dealias and Leray-project before solving.
    """
    from .weights import Cutoff

    R = grid.box_length / 4 if radius is None else radius
    if not 0 < 2 * R <= grid.box_length / 2:
        raise ValueError("cutoff support must fit inside the periodic box")
    c = np.asarray(grid.center).reshape(3, 1, 1, 1)
    x = np.stack(np.broadcast_arrays(*grid.coordinates)) - c
    box = DssBox(grid.box_length / 2, grid.n_per_axis)
    r = np.sqrt(np.sum(x**2, axis=0))
    ok = r >= box.core
    k = _shell_index(np.where(ok, r, 1.0), gen.lam)
    scale = gen.lam ** (-k.astype(float))
    vals = np.where(ok, scale * gen.g(x * scale), 0.0)
    return vals * Cutoff(R).profile(r)


# ---------------------------------------------------------------------------
# two-box scaling covariance


def _relative_difference(a: np.ndarray, b: np.ndarray, grid) -> float:
    w = grid.hermitian_weight
    num = float(np.sum(np.abs(a - b) ** 2 * w))
    den = float(np.sum(np.abs(a) ** 2 * w))
    if den == 0:
        return math.sqrt(num)
    return math.sqrt(num / den)


def rotate_array(a: np.ndarray, perm=(1, 2, 0)) -> np.ndarray:
    """Apply the axis permutation ``perm`` to a physical field of any rank.

    ``(R u)_i(x) = u_{perm[i]}(y)`` with ``y_{perm[j]} = x_j``, and likewise
    on every tensor index; divergence and norms are preserved.
    """
    rank = a.ndim - 3
    perm = tuple(perm)
    out = np.transpose(a, tuple(range(rank)) + tuple(rank + p for p in perm))
    for axis in range(rank):
        out = np.take(out, perm, axis=axis)
    return np.ascontiguousarray(out)


def rotate_field(f, perm=(1, 2, 0)):
    return type(f)(f.grid, physical=rotate_array(f.physical, perm))


class PermutedForcing(Forcing):
    """A forcing composed with a grid-preserving rotation."""

    def __init__(self, base: Forcing, perm=(1, 2, 0)):
        self.base = base
        self.perm = tuple(perm)

    @property
    def is_zero(self) -> bool:
        return self.base.is_zero

    def tensors(self, t: float, grid):
        out = []
        for a in self.base.tensors(t, grid):
            out.append(None if a is None else forward(rotate_array(inverse(a, grid), self.perm)))
        return tuple(out)


def scaling_covariance_check(config, lam: float = 2.0, *, initial=None, forcing=None) -> dict:
    """Run the base problem on box ``L`` and the rescaled one on box ``L / lam``.

    The companion run uses data ``lam u0(lam x)`` (the same samples times
    ``lam``), forcing ``lam^2 F(lam^2 t, lam x)``, step ``dt / lam^2``,
    horizon ``t_end / lam^2`` and scale ``eps / lam`` (fixed kernel) or
    ``eps`` (time-scaled kernel, covariant by construction).  Reports the
    largest relative ``L^2`` difference between ``lam (u, b)(lam^2 t, lam x)``
    and the companion fields over all output times.
    """
    from .evolution import _resolve_inputs, solve_mhdg

    if not lam > 1:
        raise ValueError("lambda must exceed 1")
    grid = config.grid
    small = grid.rescaled(lam)
    u0, b0, base_forcing = _resolve_inputs(config, initial, forcing)
    if u0.grid != grid:
        raise ValueError("initial data resolution does not match the configured grid")
    eps_small = config.epsilon / lam if config.mollifier_variant == "fixed" else config.epsilon
    companion = replace(
        config,
        grid=small,
        dt=config.dt / lam**2,
        t_end=config.t_end / lam**2,
        epsilon=eps_small,
        ledger_gammas=(),
    )
    base_cfg = replace(config, ledger_gammas=())
    base = solve_mhdg(base_cfg, initial=(u0, b0), forcing=base_forcing)
    u0s = VectorField(small, spectral=lam * u0.spectral)
    b0s = VectorField(small, spectral=lam * b0.spectral)
    comp = solve_mhdg(companion, initial=(u0s, b0s), forcing=RescaledForcing(base_forcing, lam))
    if len(base.states) != len(comp.states):
        raise ValueError("runs produced different numbers of outputs")
    diffs = []
    for sb, sc in zip(base.states, comp.states):
        a = np.concatenate([lam * sb.u.spectral, lam * sb.b.spectral])
        c = np.concatenate([sc.u.spectral, sc.b.spectral])
        diffs.append(_relative_difference(a, c, grid))
    return {
        "lambda": lam,
        "times": [float(s.t) for s in base.states],
        "relative_differences": diffs,
        "max_relative_difference": max(diffs),
        "mollifier_variant": config.mollifier_variant,
    }
