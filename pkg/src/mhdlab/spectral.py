"""Periodic-box field arithmetic on a uniform N^3 grid.

Spectral data are stored as real-to-complex half spectra (``rfftn`` layout,
shape ``(N, N, N//2 + 1)``) with *forward* normalization, so a stored
coefficient is the amplitude of ``exp(i k.x)`` in the Fourier series of the
field.  The half spectrum makes Hermitian symmetry structural; the two
self-conjugate planes (``m3 = 0`` and ``m3 = -N/2``) are re-symmetrized by
:func:`enforce_hermitian` after nonlinear products.

Component axes lead: a vector field has physical shape ``(3, N, N, N)`` and a
tensor field ``(3, 3, N, N, N)``.  Axis ``0`` of the box is ``x1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

_SPATIAL_AXES = (-3, -2, -1)


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on the box ``[0, L)^3``."""

    n_per_axis: int
    box_length: float = 2.0 * math.pi
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self) -> None:
        n = self.n_per_axis
        if int(n) != n or n < 8 or n % 2:
            raise ValueError(f"n_per_axis must be an even integer >= 8, got {n!r}")
        if not self.box_length > 0:
            raise ValueError(f"box_length must be positive, got {self.box_length!r}")
        if not 0 < self.dealias_fraction <= 1:
            raise ValueError(
                f"dealias_fraction must lie in (0, 1], got {self.dealias_fraction!r}"
            )

    @property
    def h(self) -> float:
        return self.box_length / self.n_per_axis

    @property
    def shape(self) -> tuple[int, int, int]:
        n = self.n_per_axis
        return (n, n, n)

    @property
    def spectral_shape(self) -> tuple[int, int, int]:
        n = self.n_per_axis
        return (n, n, n // 2 + 1)

    @property
    def cell_volume(self) -> float:
        return self.h**3

    @property
    def volume(self) -> float:
        return self.box_length**3

    @property
    def center(self) -> tuple[float, float, float]:
        c = 0.5 * self.box_length
        return (c, c, c)

    def padded(self, factor: int = 2) -> Grid:
        """Finer grid on the same box (used for alias-free cubic quadrature)."""
        return Grid(self.n_per_axis * factor, self.box_length, self.dealias_fraction)

    def rescaled(self, lam: float) -> Grid:
        """Same resolution on the box of side ``L / lam``."""
        return Grid(self.n_per_axis, self.box_length / lam, self.dealias_fraction)

    # -- mode bookkeeping ------------------------------------------------

    @cached_property
    def mode_indices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Integer wavenumbers ``m`` broadcastable over the half spectrum."""
        n = self.n_per_axis
        full = np.fft.fftfreq(n, 1.0 / n).astype(np.int64)
        half = np.arange(n // 2 + 1, dtype=np.int64)
        return (full[:, None, None], full[None, :, None], half[None, None, :])

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Physical wavenumbers ``2 pi m / L``; the half-axis Nyquist is +N/2."""
        scale = 2.0 * math.pi / self.box_length
        return tuple(scale * m.astype(float) for m in self.mode_indices)

    @cached_property
    def odd_wavenumbers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Wavenumbers for odd-order multipliers, with the Nyquist entries zeroed.

        A first derivative of a real field has no well-defined Nyquist
        coefficient; zeroing it keeps every odd multiplier Hermitian.
        """
        n = self.n_per_axis
        out = []
        for k, m in zip(self.wavenumbers, self.mode_indices):
            out.append(np.where(np.abs(m) == n // 2, 0.0, k))
        return tuple(out)

    @cached_property
    def k_squared(self) -> np.ndarray:
        k1, k2, k3 = self.wavenumbers
        return k1**2 + k2**2 + k3**2

    @cached_property
    def inv_k_squared(self) -> np.ndarray:
        ksq = self.k_squared
        out = np.zeros_like(ksq)
        np.divide(1.0, ksq, out=out, where=ksq > 0)
        return out

    @cached_property
    def odd_inv_k_squared(self) -> np.ndarray:
        """``1 / |k|^2`` built from :attr:`odd_wavenumbers` (0 where that vanishes)."""
        k1, k2, k3 = self.odd_wavenumbers
        ksq = k1**2 + k2**2 + k3**2
        out = np.zeros_like(ksq)
        np.divide(1.0, ksq, out=out, where=ksq > 0)
        return out

    @cached_property
    def dealias_cutoff(self) -> int:
        """Largest retained ``|m_i|``; strictly below ``fraction * N / 2``."""
        return int(math.ceil(self.dealias_fraction * self.n_per_axis / 2.0)) - 1

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        kc = self.dealias_cutoff
        m1, m2, m3 = self.mode_indices
        return (np.abs(m1) <= kc) & (np.abs(m2) <= kc) & (np.abs(m3) <= kc)

    @cached_property
    def hermitian_weight(self) -> np.ndarray:
        """Multiplicity of each stored half-spectrum mode in the full spectrum."""
        n = self.n_per_axis
        w = np.full(n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        return w[None, None, :]

    @cached_property
    def coordinates(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = np.arange(self.n_per_axis) * self.h
        return (x[:, None, None], x[None, :, None], x[None, None, :])

    def distance_to(self, center) -> np.ndarray:
        """Euclidean (non-periodized) distance of each grid point to ``center``."""
        x1, x2, x3 = self.coordinates
        c1, c2, c3 = center
        return np.sqrt((x1 - c1) ** 2 + (x2 - c2) ** 2 + (x3 - c3) ** 2)

    @cached_property
    def periodic_radius(self) -> np.ndarray:
        """Minimum-image distance of each grid point to the origin."""
        n = self.n_per_axis
        idx = np.fft.fftfreq(n, 1.0 / n) * self.h
        r2 = idx[:, None, None] ** 2 + idx[None, :, None] ** 2 + idx[None, None, :] ** 2
        return np.sqrt(r2)


# ---------------------------------------------------------------------------
# array-level transforms and multipliers


def forward(a: np.ndarray) -> np.ndarray:
    """Physical samples to half-spectrum Fourier coefficients."""
    return sfft.rfftn(a, axes=_SPATIAL_AXES, norm="forward")


def inverse(a_hat: np.ndarray, grid: Grid) -> np.ndarray:
    """Half-spectrum coefficients to physical samples."""
    return sfft.irfftn(a_hat, s=grid.shape, axes=_SPATIAL_AXES, norm="forward")


def enforce_hermitian(a_hat: np.ndarray) -> np.ndarray:
    """Symmetrize the self-conjugate planes of a half spectrum in place."""
    for plane in (0, -1):
        p = a_hat[..., plane]
        mirror = np.roll(np.flip(p, axis=(-2, -1)), 1, axis=(-2, -1))
        a_hat[..., plane] = 0.5 * (p + np.conj(mirror))
    return a_hat


def gradient_hat(f_hat: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectral gradient; a new leading axis of length 3 is prepended."""
    k = grid.odd_wavenumbers
    return np.stack([1j * ki * f_hat for ki in k])


def divergence_hat(v_hat: np.ndarray, grid: Grid) -> np.ndarray:
    """Contract the first component axis against ``i k``."""
    k1, k2, k3 = grid.odd_wavenumbers
    return 1j * (k1 * v_hat[0] + k2 * v_hat[1] + k3 * v_hat[2])


def leray_hat(v_hat: np.ndarray, grid: Grid) -> np.ndarray:
    """Per-mode projection ``e - (e.k)k/|k|^2``; zero mode untouched.

    Built from the odd wavenumbers so that it is Hermitian on the Nyquist
    planes and exactly annihilated by :func:`divergence_hat`.
    """
    k = grid.odd_wavenumbers
    kdot = k[0] * v_hat[0] + k[1] * v_hat[1] + k[2] * v_hat[2]
    kdot = kdot * grid.odd_inv_k_squared
    return np.stack([v_hat[i] - k[i] * kdot for i in range(3)])


def riesz_riesz_hat(t_hat: np.ndarray, grid: Grid) -> np.ndarray:
    """``sum_ij R_i R_j T_ij`` with multiplier ``-k_i k_j / |k|^2`` (odd wavenumbers)."""
    k = grid.odd_wavenumbers
    acc = np.zeros(t_hat.shape[2:], dtype=complex)
    for i in range(3):
        for j in range(3):
            acc += k[i] * k[j] * t_hat[i, j]
    return -acc * grid.odd_inv_k_squared


def heat_factor(grid: Grid, tau: float) -> np.ndarray:
    return np.exp(-grid.k_squared * tau)


def pad_hat(a_hat: np.ndarray, grid: Grid, big: Grid) -> np.ndarray:
    """Embed a half spectrum into the half spectrum of a finer grid.

    Modes with ``|m_i| < N/2`` are copied; Nyquist entries are dropped.
    Forward normalization makes the embedding coefficient-preserving.
    """
    n, m = grid.n_per_axis, big.n_per_axis
    lead = a_hat.shape[:-3]
    out = np.zeros(lead + big.spectral_shape, dtype=complex)
    h = n // 2
    pos = slice(0, h)
    for s1, d1 in ((pos, pos), (slice(n - h + 1, n), slice(m - h + 1, m))):
        for s2, d2 in ((pos, pos), (slice(n - h + 1, n), slice(m - h + 1, m))):
            out[..., d1, d2, 0:h] = a_hat[..., s1, s2, 0:h]
    return out


def truncate_hat(a_hat: np.ndarray, big: Grid, grid: Grid) -> np.ndarray:
    """Inverse of :func:`pad_hat`: keep the modes representable on ``grid``."""
    n, m = grid.n_per_axis, big.n_per_axis
    lead = a_hat.shape[:-3]
    out = np.zeros(lead + grid.spectral_shape, dtype=complex)
    h = n // 2
    pos = slice(0, h)
    for d1, s1 in ((pos, pos), (slice(n - h + 1, n), slice(m - h + 1, m))):
        for d2, s2 in ((pos, pos), (slice(n - h + 1, n), slice(m - h + 1, m))):
            out[..., d1, d2, 0:h] = a_hat[..., s1, s2, 0:h]
    return out


def spectral_inner(a_hat: np.ndarray, b_hat: np.ndarray, grid: Grid) -> float:
    """``int a.b dx`` from half-spectrum coefficients (sum over leading axes)."""
    prod = (a_hat * np.conj(b_hat)).real * grid.hermitian_weight
    return float(grid.volume * np.sum(prod))


def physical_inner(a: np.ndarray, b: np.ndarray, grid: Grid) -> float:
    """Midpoint-rule ``int a.b dx`` (sum over leading axes)."""
    return float(np.sum(a * b) * grid.cell_volume)


# ---------------------------------------------------------------------------
# field containers


class Field:
    """Sampled field with lazily synchronized physical and spectral views."""

    rank = 0

    def __init__(self, grid: Grid, physical=None, spectral=None):
        if physical is None and spectral is None:
            raise ValueError("a field needs physical samples or spectral coefficients")
        self.grid = grid
        lead = (3,) * self.rank
        if physical is not None:
            physical = np.asarray(physical, dtype=float)
            if physical.shape != lead + grid.shape:
                raise ValueError(
                    f"physical shape {physical.shape} does not match {lead + grid.shape}"
                )
        if spectral is not None:
            spectral = np.asarray(spectral, dtype=complex)
            if spectral.shape != lead + grid.spectral_shape:
                raise ValueError(
                    f"spectral shape {spectral.shape} does not match "
                    f"{lead + grid.spectral_shape}"
                )
        self._physical = physical
        self._spectral = spectral

    @classmethod
    def zeros(cls, grid: Grid):
        return cls(grid, spectral=np.zeros((3,) * cls.rank + grid.spectral_shape, complex))

    @property
    def physical(self) -> np.ndarray:
        if self._physical is None:
            self._physical = inverse(self._spectral, self.grid)
        return self._physical

    @property
    def spectral(self) -> np.ndarray:
        if self._spectral is None:
            self._spectral = forward(self._physical)
        return self._spectral

    def with_spectral(self, a_hat: np.ndarray):
        return type(self)(self.grid, spectral=a_hat)

    def with_physical(self, a: np.ndarray):
        return type(self)(self.grid, physical=a)

    def copy(self):
        return type(self)(
            self.grid,
            physical=None if self._physical is None else self._physical.copy(),
            spectral=None if self._spectral is None else self._spectral.copy(),
        )

    def _check(self, other: Field) -> None:
        if type(other) is not type(self):
            raise TypeError(f"cannot combine {type(self).__name__} with {type(other).__name__}")
        if other.grid != self.grid:
            raise ValueError("grid mismatch")

    def __add__(self, other: Field):
        self._check(other)
        return self.with_spectral(self.spectral + other.spectral)

    def __sub__(self, other: Field):
        self._check(other)
        return self.with_spectral(self.spectral - other.spectral)

    def __mul__(self, scalar: float):
        return self.with_spectral(self.spectral * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_spectral(-self.spectral)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(N={self.grid.n_per_axis}, L={self.grid.box_length:g})"


class ScalarField(Field):
    rank = 0


class VectorField(Field):
    rank = 1

    def __getitem__(self, i: int) -> ScalarField:
        return ScalarField(
            self.grid,
            physical=None if self._physical is None else self._physical[i],
            spectral=None if self._spectral is None else self._spectral[i],
        )

    @classmethod
    def from_components(cls, comps) -> VectorField:
        comps = list(comps)
        grid = comps[0].grid
        if any(c.grid != grid for c in comps):
            raise ValueError("components must share one grid")
        return cls(grid, spectral=np.stack([c.spectral for c in comps]))


class TensorField(Field):
    rank = 2

    def __getitem__(self, ij) -> ScalarField:
        i, j = ij
        return ScalarField(
            self.grid,
            physical=None if self._physical is None else self._physical[i, j],
            spectral=None if self._spectral is None else self._spectral[i, j],
        )

    def transpose(self) -> TensorField:
        return TensorField(self.grid, spectral=np.swapaxes(self.spectral, 0, 1).copy())

    def symmetrize(self) -> TensorField:
        s = self.spectral
        return TensorField(self.grid, spectral=0.5 * (s + np.swapaxes(s, 0, 1)))


# ---------------------------------------------------------------------------
# field-level operations


def transform_roundtrip(f: Field) -> tuple[Field, float]:
    """Round-trip through the spectral view; returns the field and max relative deviation."""
    a = f.physical
    back = inverse(forward(a), f.grid)
    scale = float(np.max(np.abs(a)))
    dev = float(np.max(np.abs(back - a))) / scale if scale > 0 else float(np.max(np.abs(back)))
    return f.with_physical(back), dev


def derivative(f: Field, op) -> Field:
    """``op`` is an axis ``0, 1, 2`` (partial derivative) or ``"laplacian"``."""
    if op == "laplacian":
        return f.with_spectral(-f.grid.k_squared * f.spectral)
    if op in (0, 1, 2):
        return f.with_spectral(1j * f.grid.odd_wavenumbers[op] * f.spectral)
    raise ValueError(f"unknown derivative op {op!r}")


def gradient(f: ScalarField) -> VectorField:
    return VectorField(f.grid, spectral=gradient_hat(f.spectral, f.grid))


def divergence(v: VectorField) -> ScalarField:
    return ScalarField(v.grid, spectral=divergence_hat(v.spectral, v.grid))


def tensor_divergence(t: TensorField) -> VectorField:
    """``(div T)_j = sum_i d_i T_ij``."""
    return VectorField(t.grid, spectral=divergence_hat(t.spectral, t.grid))


def leray_project(v: VectorField) -> VectorField:
    return v.with_spectral(leray_hat(v.spectral, v.grid))


def riesz(f: ScalarField, axis: int) -> ScalarField:
    """Riesz transform with multiplier ``i k_axis / |k|`` (zero mode to 0)."""
    g = f.grid
    inv_k = np.sqrt(g.odd_inv_k_squared)
    return f.with_spectral(1j * g.odd_wavenumbers[axis] * inv_k * f.spectral)


def riesz_riesz_contract(t: TensorField) -> ScalarField:
    return ScalarField(t.grid, spectral=riesz_riesz_hat(t.spectral, t.grid))


def heat_propagate(f: Field, tau: float) -> Field:
    if tau < 0:
        raise ValueError("heat propagation time must be nonnegative")
    return f.with_spectral(heat_factor(f.grid, tau) * f.spectral)


def dealias(f: Field) -> Field:
    return f.with_spectral(f.spectral * f.grid.dealias_mask)


def inner(f: Field, g: Field) -> float:
    """Discrete ``L^2`` inner product (summed over components)."""
    f._check(g)
    return spectral_inner(f.spectral, g.spectral, f.grid)


def l2_norm(f: Field) -> float:
    return math.sqrt(max(inner(f, f), 0.0))


def max_divergence(v: VectorField) -> float:
    """Largest spectral divergence coefficient magnitude."""
    return float(np.max(np.abs(divergence_hat(v.spectral, v.grid))))


def outer_product(a: VectorField, b: VectorField, dealiased: bool = True) -> TensorField:
    """``(a (x) b)_ij = a_i b_j``, computed alias-free on a padded grid and truncated.

    With ``dealiased`` the result is restricted to the retained band.
    """
    g = a.grid
    if b.grid != g:
        raise ValueError("grid mismatch")
    big = g.padded(2)
    ap = inverse(pad_hat(a.spectral, g, big), big)
    bp = inverse(pad_hat(b.spectral, g, big), big)
    prod = ap[:, None] * bp[None, :]
    t_hat = truncate_hat(forward(prod), big, g)
    if dealiased:
        t_hat *= g.dealias_mask
    return TensorField(g, spectral=enforce_hermitian(t_hat))
