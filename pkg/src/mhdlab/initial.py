"""Named initial fields and forcing tensors on the periodic box.

All generated data are band-limited to the dealiased band and Leray
projected, so they are admissible solver inputs without further treatment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import Grid, TensorField, VectorField, forward, leray_hat

INITIAL_KINDS = ("zero", "orszag_tang", "shear", "taylor_green", "abc", "random", "dss", "snapshot")
FORCING_KINDS = ("zero", "mode")


def _admissible(v_hat: np.ndarray, grid: Grid) -> np.ndarray:
    return leray_hat(v_hat * grid.dealias_mask, grid)


def _angles(grid: Grid):
    s = 2.0 * math.pi / grid.box_length
    x1, x2, x3 = grid.coordinates
    return s * x1, s * x2, s * x3


def orszag_tang(grid: Grid, amplitude: float = 1.0, magnetic_ratio: float = 0.8):
    """A three-dimensional Orszag-Tang-like pair built from unit wavenumbers.

    ``u = (-sin y, sin x, 0) + (0, 0, sin x cos y)`` style combinations that
    mix all three axes, so nonlinear transfer starts immediately.
    """
    x, y, z = _angles(grid)
    shape = grid.shape
    u = np.stack(
        [
            np.broadcast_to(-np.sin(y) + 0.5 * np.sin(z), shape),
            np.broadcast_to(np.sin(x) + 0.5 * np.cos(z), shape),
            np.broadcast_to(0.5 * np.sin(x + y), shape),
        ]
    )
    b = np.stack(
        [
            np.broadcast_to(-np.sin(y) + np.sin(z), shape),
            np.broadcast_to(np.sin(x) + np.sin(z), shape),
            np.broadcast_to(np.sin(x) + np.sin(y), shape),
        ]
    )
    return amplitude * u, amplitude * magnetic_ratio * b


def shear(grid: Grid, amplitude: float = 1.0):
    """One-dimensional shear ``u = (sin(2 pi x2 / L), 0, 0)``, ``b = 0``."""
    _, y, _ = _angles(grid)
    u = np.zeros((3,) + grid.shape)
    u[0] = amplitude * np.broadcast_to(np.sin(y), grid.shape)
    return u, np.zeros_like(u)


def taylor_green(grid: Grid, amplitude: float = 1.0, magnetic_ratio: float = 0.5):
    x, y, z = _angles(grid)
    u = np.stack(
        [np.sin(x) * np.cos(y) * np.cos(z), -np.cos(x) * np.sin(y) * np.cos(z), 0 * x * y * z]
    )
    b = np.stack(
        [np.cos(x) * np.sin(y) * np.sin(z), -np.sin(x) * np.cos(y) * np.sin(z), 0 * x * y * z]
    )
    return amplitude * u, amplitude * magnetic_ratio * b


def abc(grid: Grid, amplitude: float = 1.0, magnetic_ratio: float = 0.5):
    """Arnold-Beltrami-Childress velocity with a shifted ABC magnetic field."""
    x, y, z = _angles(grid)
    shape = grid.shape
    u = np.stack(
        [
            np.broadcast_to(np.sin(z) + np.cos(y), shape),
            np.broadcast_to(np.sin(x) + np.cos(z), shape),
            np.broadcast_to(np.sin(y) + np.cos(x), shape),
        ]
    )
    b = np.stack(
        [
            np.broadcast_to(np.cos(z) + np.sin(y), shape),
            np.broadcast_to(np.cos(x) + np.sin(z), shape),
            np.broadcast_to(np.cos(y) + np.sin(x), shape),
        ]
    )
    return amplitude * u, amplitude * magnetic_ratio * b


def random_solenoidal_hat(
    grid: Grid,
    rng: np.random.Generator,
    *,
    kmax: int | None = None,
    slope: float = 2.0,
    count: int = 1,
) -> np.ndarray:
    """Random divergence-free band-limited vector fields, unit ``L^2`` norm each.

    Coefficients are complex Gaussian with amplitude ``|m|^-slope`` for
    ``1 <= |m_i| <= kmax``; the result is real (Hermitian) by construction.
    Returns shape ``(count, 3) + spectral_shape``.
    """
    kc = grid.dealias_cutoff if kmax is None else min(kmax, grid.dealias_cutoff)
    out = []
    for _ in range(count):
        a = rng.standard_normal((3,) + grid.shape)
        a_hat = forward(a)
        m1, m2, m3 = grid.mode_indices
        mm = np.sqrt(m1**2 + m2**2 + m3**2)
        keep = (np.abs(m1) <= kc) & (np.abs(m2) <= kc) & (np.abs(m3) <= kc) & (mm > 0)
        amp = np.where(keep, np.where(mm > 0, mm, 1.0) ** (-slope), 0.0)
        v_hat = leray_hat(a_hat * amp, grid)
        norm = math.sqrt(
            grid.volume * float(np.sum(np.abs(v_hat) ** 2 * grid.hermitian_weight))
        )
        out.append(v_hat / norm if norm > 0 else v_hat)
    return np.stack(out)


@dataclass
class InitialSpec:
    kind: str = "orszag_tang"
    amplitude: float = 1.0
    magnetic_ratio: float = 0.8
    path: str | None = None
    kmax: int = 4

    def __post_init__(self) -> None:
        if self.kind not in INITIAL_KINDS:
            raise ValueError(f"unknown initial data {self.kind!r}; expected one of {INITIAL_KINDS}")


def initial_fields(spec: InitialSpec, grid: Grid, seed: int = 0) -> tuple[VectorField, VectorField]:
    if spec.kind == "snapshot":
        from .io import read_snapshot

        state = read_snapshot(spec.path)
        if state.u.grid != grid:
            raise ValueError("snapshot grid does not match the configured grid")
        u_hat, b_hat = state.u.spectral, state.b.spectral
    elif spec.kind == "zero":
        u_hat = np.zeros((3,) + grid.spectral_shape, complex)
        b_hat = u_hat.copy()
    elif spec.kind == "dss":
        from .dss import dss_initial_data, standard_generator

        u = dss_initial_data(standard_generator(amplitude=spec.amplitude, forcing=False), grid)
        u_hat = forward(u)
        b_hat = spec.magnetic_ratio * u_hat
    elif spec.kind == "random":
        rng = np.random.default_rng(seed)
        pair = random_solenoidal_hat(grid, rng, kmax=spec.kmax, count=2)
        u_hat = spec.amplitude * pair[0]
        b_hat = spec.amplitude * spec.magnetic_ratio * pair[1]
    else:
        if spec.kind == "shear":
            u, b = shear(grid, spec.amplitude)
        else:
            maker = {"orszag_tang": orszag_tang, "taylor_green": taylor_green, "abc": abc}[spec.kind]
            u, b = maker(grid, spec.amplitude, spec.magnetic_ratio)
        u_hat, b_hat = forward(u), forward(b)
    return (
        VectorField(grid, spectral=_admissible(u_hat, grid)),
        VectorField(grid, spectral=_admissible(b_hat, grid)),
    )


# ---------------------------------------------------------------------------
# forcing


class Forcing:
    """Time-dependent forcing tensors ``(F, G)``; ``None`` stands for zero."""

    is_zero = False

    def tensors(self, t: float, grid: Grid):
        raise NotImplementedError

    def fields(self, t: float, grid: Grid):
        f_hat, g_hat = self.tensors(t, grid)
        return (
            None if f_hat is None else TensorField(grid, spectral=f_hat),
            None if g_hat is None else TensorField(grid, spectral=g_hat),
        )


class ZeroForcing(Forcing):
    is_zero = True

    def tensors(self, t: float, grid: Grid):
        return None, None


@dataclass
class ModeForcing(Forcing):
    """``F_ij(t, x) = A cos(omega t) P_ij sin(k.x)`` and likewise for ``G`` (ratio ``beta``).

    ``mode`` is the integer wavevector on the box this forcing is defined on;
    evaluation on another grid of the same resolution samples the same
    physical function only if the box matches.
    """

    amplitude: float = 1.0
    mode: tuple[int, int, int] = (1, 0, 0)
    omega: float = 0.0
    magnetic_ratio: float = 0.5
    pattern: tuple = ((0.0, 1.0, 0.0), (0.5, 0.0, 0.0), (0.0, 0.0, 0.0))
    box_length: float = 2.0 * math.pi

    def _profile(self, t: float, grid: Grid) -> np.ndarray:
        s = 2.0 * math.pi / self.box_length
        x1, x2, x3 = grid.coordinates
        m = self.mode
        phase = s * (m[0] * x1 + m[1] * x2 + m[2] * x3)
        return self.amplitude * math.cos(self.omega * t) * np.sin(phase)

    def tensors(self, t: float, grid: Grid):
        prof = np.broadcast_to(self._profile(t, grid), grid.shape)
        pat = np.asarray(self.pattern, dtype=float)
        f = pat[:, :, None, None, None] * prof
        g = self.magnetic_ratio * np.swapaxes(f, 0, 1)
        mask = grid.dealias_mask
        return forward(f) * mask, forward(g) * mask


@dataclass
class RescaledForcing(Forcing):
    """``lam^2 F(lam^2 t, lam x)`` on a grid of the same resolution over the box ``L / lam``."""

    base: Forcing
    lam: float

    @property
    def is_zero(self) -> bool:
        return self.base.is_zero

    def tensors(self, t: float, grid: Grid):
        big = Grid(grid.n_per_axis, grid.box_length * self.lam, grid.dealias_fraction)
        f_hat, g_hat = self.base.tensors(self.lam**2 * t, big)
        s = self.lam**2
        return (None if f_hat is None else s * f_hat, None if g_hat is None else s * g_hat)


@dataclass
class ForcingSpec:
    kind: str = "zero"
    amplitude: float = 0.0
    mode: tuple[int, int, int] = (1, 0, 0)
    omega: float = 0.0
    magnetic_ratio: float = 0.5
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in FORCING_KINDS:
            raise ValueError(f"unknown forcing {self.kind!r}; expected one of {FORCING_KINDS}")

    def build(self, grid: Grid) -> Forcing:
        if self.kind == "zero" or self.amplitude == 0:
            return ZeroForcing()
        return ModeForcing(
            amplitude=self.amplitude,
            mode=tuple(self.mode),
            omega=self.omega,
            magnetic_ratio=self.magnetic_ratio,
            box_length=grid.box_length,
        )
