"""Time integration of the mollified MHD system and of its linearized version.

Two drivers share one right-hand side:

* an integrating-factor (Lawson) fourth-order Runge-Kutta stepper, and
* a Picard iteration of the Duhamel formula on a window of time nodes, with
  the heat semigroup applied exactly per mode and the nonlinearity
  interpolated linearly between nodes (second order, exact for the
  interpolant).

State vectors are half spectra of shape ``(6, N, N, N//2 + 1)``: ``u`` in
rows 0-2 and ``b`` in rows 3-5.  The explicit part of the right-hand side is

    N(t, U) = - P div(v (x) u - c (x) b) + P div F,
              - P div(v (x) b - c (x) u) + P div G,

with ``(v, c)`` the drifts (mollified ``(u, b)`` for the nonlinear system,
prescribed fields for the advection-diffusion problem).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .energy import LedgerEvaluator, compute_p_q_hat, ledger_from_samples
from .initial import Forcing, ForcingSpec, InitialSpec, initial_fields
from .mollifier import KERNEL_SHAPES, _check_scale, kernel_multiplier
from .spectral import (
    Grid,
    ScalarField,
    TensorField,
    VectorField,
    divergence_hat,
    enforce_hermitian,
    forward,
    inverse,
    leray_hat,
)
from .weights import Weight

# Existence-time constant c from scripts/calibrate_constants.py (see README).
DEFAULT_EXISTENCE_CONSTANT = 2718.0

MOLLIFIER_VARIANTS = ("fixed", "time_scaled")
DRIVERS = ("stepper", "picard")
PICARD_STARTS = ("zero", "linear", "perturbed")


class BlowUpError(RuntimeError):
    """Non-finite values appeared; ``last_state`` is the last finite state."""

    def __init__(self, message: str, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class PicardDivergenceError(RuntimeError):
    """Picard iteration did not reach the tolerance; ``history`` holds iterate distances."""

    def __init__(self, message: str, history):
        super().__init__(message)
        self.history = list(history)


@dataclass
class PicardConfig:
    tol: float = 1e-10
    max_iters: int = 60
    start: str = "zero"
    perturbation: float = 0.05

    def __post_init__(self) -> None:
        if not self.tol > 0:
            raise ValueError("picard.tol must be positive")
        if self.max_iters < 1:
            raise ValueError("picard.max_iters must be at least 1")
        if self.start not in PICARD_STARTS:
            raise ValueError(f"picard.start must be one of {PICARD_STARTS}")


@dataclass
class SimConfig:
    grid: Grid
    epsilon: float
    dt: float
    t_end: float
    gamma: float = 1.5
    initial: InitialSpec = field(default_factory=InitialSpec)
    forcing: ForcingSpec = field(default_factory=ForcingSpec)
    mollifier_variant: str = "fixed"
    kernel_shape: str = "gaussian_bump"
    driver: str = "stepper"
    picard: PicardConfig = field(default_factory=PicardConfig)
    picard_window: float | None = None
    existence_constant: float = DEFAULT_EXISTENCE_CONSTANT
    snapshot_every: int = 1
    ledger_every: int = 1
    ledger_gammas: tuple = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end >= self.dt * (1 - 1e-12):
            raise ValueError("t_end must be at least dt")
        if self.mollifier_variant not in MOLLIFIER_VARIANTS:
            raise ValueError(f"mollifier_variant must be one of {MOLLIFIER_VARIANTS}")
        if self.kernel_shape not in KERNEL_SHAPES:
            raise ValueError(f"kernel_shape must be one of {KERNEL_SHAPES}")
        if self.driver not in DRIVERS:
            raise ValueError(f"driver must be one of {DRIVERS}")
        if self.mollifier_variant == "fixed":
            _check_scale(self.epsilon, self.grid)
        elif not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.snapshot_every < 1 or self.ledger_every < 1:
            raise ValueError("cadences must be positive integers")
        if not self.existence_constant > 0:
            raise ValueError("existence_constant must be positive")

    @property
    def n_steps(self) -> int:
        return max(1, int(math.ceil(self.t_end / self.dt - 1e-9)))

    def step_times(self) -> np.ndarray:
        times = np.arange(self.n_steps + 1) * self.dt
        times[-1] = self.t_end
        return times


@dataclass(frozen=True)
class SimState:
    """Immutable snapshot.  ``F``/``G`` of ``None`` mean zero forcing;
    ``v``/``c`` are the drifts in effect at ``t``."""

    t: float
    u: VectorField
    b: VectorField
    p: ScalarField
    q: ScalarField
    F: TensorField | None = None
    G: TensorField | None = None
    v: VectorField | None = None
    c: VectorField | None = None


@dataclass
class Trajectory:
    grid: Grid
    states: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    samples: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def append(self, state: SimState) -> None:
        if self.states and not state.t > self.states[-1].t:
            raise ValueError("trajectory times must increase strictly")
        self.states.append(state)


# ---------------------------------------------------------------------------
# right-hand side


def _phi_functions(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``phi1 = (1 - e^-z)/z`` and ``phi2 = (z - 1 + e^-z)/z^2`` with series near 0."""
    z = np.asarray(z, dtype=float)
    small = z < 1e-2
    zs = np.where(small, 1.0, z)
    em1 = np.expm1(-zs)
    phi1 = np.where(small, 1 - z / 2 + z**2 / 6 - z**3 / 24 + z**4 / 120 - z**5 / 720, -em1 / zs)
    phi2 = np.where(
        small,
        0.5 - z / 6 + z**2 / 24 - z**3 / 120 + z**4 / 720 - z**5 / 5040,
        (zs + em1) / zs**2,
    )
    return phi1, phi2


class Dynamics:
    """Right-hand side of the mollified system on one grid.

    ``drift`` overrides the drifts: a callable ``t -> (v_hat, c_hat)`` of
    prescribed fields (the advection-diffusion problem).  With
    ``mollify_drift`` the prescribed fields are convolved with the configured
    kernel, as in the linearized mollified problem.
    """

    def __init__(self, config: SimConfig, forcing: Forcing, drift=None, mollify_drift: bool = True):
        self.config = config
        self.grid = config.grid
        self.forcing = forcing
        self.drift = drift
        self.mollify_drift = mollify_drift
        self.mask = self.grid.dealias_mask
        self._exp_cache: dict = {}

    # kernels -------------------------------------------------------------

    def drift_multiplier(self, t: float) -> np.ndarray:
        cfg = self.config
        if cfg.mollifier_variant == "fixed":
            return kernel_multiplier(cfg.kernel_shape, cfg.epsilon, self.grid)
        if t <= 0:
            return np.ones(self.grid.spectral_shape)
        scale = cfg.epsilon * math.sqrt(t)
        return kernel_multiplier(cfg.kernel_shape, scale, self.grid, check=False)

    def drifts(self, t: float, U: np.ndarray) -> np.ndarray:
        """Drift pair ``(v, c)`` stacked like ``U``."""
        if self.drift is not None:
            V = self.drift(t)
            return V * self.drift_multiplier(t) if self.mollify_drift else V
        return U * self.drift_multiplier(t)

    def exp_factor(self, tau: float) -> np.ndarray:
        key = float(tau)
        if key not in self._exp_cache:
            if len(self._exp_cache) > 16:
                self._exp_cache.clear()
            self._exp_cache[key] = np.exp(-self.grid.k_squared * key)
        return self._exp_cache[key]

    # terms ---------------------------------------------------------------

    def bilinear(self, U: np.ndarray, V: np.ndarray) -> np.ndarray:
        """``P div(v(x)u - c(x)b)`` and ``P div(v(x)b - c(x)u)``, dealiased."""
        g = self.grid
        phys = inverse(np.concatenate([U, V]), g)
        u, b, v, c = phys[0:3], phys[3:6], phys[6:9], phys[9:12]
        prod = np.empty((2, 3, 3) + g.shape)
        np.multiply(v[:, None], u[None, :], out=prod[0])
        prod[0] -= c[:, None] * b[None, :]
        np.multiply(v[:, None], b[None, :], out=prod[1])
        prod[1] -= c[:, None] * u[None, :]
        s_hat = forward(prod) * self.mask
        enforce_hermitian(s_hat)
        out = np.empty_like(U)
        out[0:3] = leray_hat(divergence_hat(s_hat[0], g), g)
        out[3:6] = leray_hat(divergence_hat(s_hat[1], g), g)
        return out

    def forcing_terms(self, t: float):
        if self.forcing.is_zero:
            return None, None, None
        f_hat, g_hat = self.forcing.tensors(t, self.grid)
        g = self.grid
        out = np.zeros((6,) + g.spectral_shape, complex)
        if f_hat is not None:
            out[0:3] = leray_hat(divergence_hat(f_hat * self.mask, g), g)
        if g_hat is not None:
            out[3:6] = leray_hat(divergence_hat(g_hat * self.mask, g), g)
        return out, f_hat, g_hat

    def nonlinear(self, t: float, U: np.ndarray) -> np.ndarray:
        return -self.bilinear(U, self.drifts(t, U))

    def explicit(self, t: float, U: np.ndarray) -> np.ndarray:
        out = self.nonlinear(t, U)
        force = self.forcing_terms(t)[0]
        if force is not None:
            out += force
        return out

    # time stepping -------------------------------------------------------

    def rk4_step(self, t: float, U: np.ndarray, h: float) -> np.ndarray:
        E2 = self.exp_factor(0.5 * h)
        E = self.exp_factor(h)
        k1 = self.explicit(t, U)
        k2 = self.explicit(t + 0.5 * h, E2 * (U + 0.5 * h * k1))
        k3 = self.explicit(t + 0.5 * h, E2 * U + 0.5 * h * k2)
        k4 = self.explicit(t + h, E * U + h * (E2 * k3))
        return E * U + (h / 6.0) * (E * k1 + 2.0 * E2 * (k2 + k3) + k4)

    # states --------------------------------------------------------------

    def make_state(self, t: float, U: np.ndarray) -> SimState:
        g = self.grid
        V = self.drifts(t, U)
        _, f_hat, g_hat = self.forcing_terms(t)
        p_hat, q_hat = compute_p_q_hat(U[0:3], U[3:6], V[0:3], V[3:6], f_hat, g_hat, g)
        return SimState(
            t=float(t),
            u=VectorField(g, spectral=U[0:3].copy()),
            b=VectorField(g, spectral=U[3:6].copy()),
            p=ScalarField(g, spectral=p_hat),
            q=ScalarField(g, spectral=q_hat),
            F=None if f_hat is None else TensorField(g, spectral=f_hat),
            G=None if g_hat is None else TensorField(g, spectral=g_hat),
            v=VectorField(g, spectral=V[0:3].copy()),
            c=VectorField(g, spectral=V[3:6].copy()),
        )


def _stack(u: VectorField, b: VectorField) -> np.ndarray:
    return np.concatenate([u.spectral, b.spectral]).astype(complex)


def _l2_norms(D: np.ndarray, grid: Grid) -> np.ndarray:
    """``L^2`` norms over the trailing 4 axes (components and modes)."""
    w = grid.hermitian_weight
    sq = np.sum((np.abs(D) ** 2) * w, axis=(-4, -3, -2, -1))
    return np.sqrt(grid.volume * sq)


def _check_finite(U: np.ndarray, t: float, last_state) -> None:
    if not np.all(np.isfinite(U)):
        raise BlowUpError(f"non-finite values at t = {t:.6g}", last_state)


# ---------------------------------------------------------------------------
# public operations


def bilinear_terms(u: VectorField, b: VectorField, v: VectorField, c: VectorField):
    """``(P[(v.grad)u - (c.grad)b], P[(v.grad)b - (c.grad)u])`` with dealiased products."""
    g = u.grid
    if any(x.grid != g for x in (b, v, c)):
        raise ValueError("grid mismatch")
    cfg = SimConfig(g, epsilon=0.25 * g.box_length, dt=1.0, t_end=1.0)
    dyn = Dynamics(cfg, _zero_forcing())
    out = dyn.bilinear(_stack(u, b), _stack(v, c))
    return VectorField(g, spectral=out[0:3]), VectorField(g, spectral=out[3:6])


def _zero_forcing():
    from .initial import ZeroForcing

    return ZeroForcing()


def duhamel_linear_part(u0: VectorField, b0: VectorField, F, G, t: float, *, nodes: int = 64):
    """``e^{t Lap}(u0, b0) + int_0^t e^{(t-s) Lap} P(div F, div G)(s) ds``.

    ``F``/``G`` are ``None``, time-independent :class:`TensorField` objects,
    or callables ``s -> TensorField``.  Time-independent forcing is
    integrated exactly per mode; time-dependent forcing uses the
    exponential trapezoid rule on ``nodes`` subintervals.
    """
    g = u0.grid
    if t < 0:
        raise ValueError("t must be nonnegative")
    U0 = _stack(u0, b0)
    E = np.exp(-g.k_squared * t)
    out = E * U0

    def tensor_at(T, s):
        if T is None:
            return None
        return (T(s) if callable(T) else T).spectral

    def source(s):
        src = np.zeros_like(U0)
        for rows, T in ((slice(0, 3), F), (slice(3, 6), G)):
            th = tensor_at(T, s)
            if th is not None:
                src[rows] = leray_hat(divergence_hat(th, g), g)
        return src

    if (F is None or not callable(F)) and (G is None or not callable(G)):
        if F is not None or G is not None:
            phi1, _ = _phi_functions(g.k_squared * t)
            out = out + t * phi1 * source(0.0)
    elif t > 0:
        h = t / nodes
        phi1, phi2 = _phi_functions(g.k_squared * h)
        Eh = np.exp(-g.k_squared * h)
        acc = np.zeros_like(U0)
        prev = source(0.0)
        for n in range(nodes):
            nxt = source((n + 1) * h)
            acc = Eh * acc + h * ((phi1 - phi2) * prev + phi2 * nxt)
            prev = nxt
        out = out + acc
    return VectorField(g, spectral=out[0:3]), VectorField(g, spectral=out[3:6])


def forcing_l2_norm(forcing: Forcing, grid: Grid, T: float, nodes: int = 64) -> float:
    """``||(F, G)||_{L^2((0,T), L^2)}`` by the trapezoid rule."""
    if forcing.is_zero or T <= 0:
        return 0.0
    ts = np.linspace(0.0, T, nodes + 1)
    vals = []
    for s in ts:
        f_hat, g_hat = forcing.tensors(s, grid)
        tot = 0.0
        for th in (f_hat, g_hat):
            if th is not None:
                tot += float(_l2_norms(th.reshape((9,) + grid.spectral_shape)[None], grid)[0] ** 2)
        vals.append(tot)
    return math.sqrt(float(np.trapezoid(vals, ts)))


def existence_time(
    u0: VectorField,
    b0: VectorField,
    F,
    epsilon: float,
    c_cal: float,
    *,
    T1: float = 1.0,
) -> float:
    """``min(T1, c eps^3 / (||(u0, b0)||_{L^2} + ||(F, G)||_{L^2((0,T1),L^2)})^2)``.

    ``F`` is ``None``, a precomputed forcing norm, or a :class:`Forcing`.
    """
    if not c_cal > 0:
        raise ValueError("calibrated constant must be positive")
    g = u0.grid
    data = float(_l2_norms(_stack(u0, b0)[None], g)[0])
    if F is None:
        fnorm = 0.0
    elif isinstance(F, Forcing):
        fnorm = forcing_l2_norm(F, g, T1)
    else:
        fnorm = float(F)
    total = data + fnorm
    if total == 0:
        return float(T1)
    return float(min(T1, c_cal * epsilon**3 / total**2))


@dataclass
class PicardResult:
    times: np.ndarray
    U: np.ndarray
    history: list
    linear: np.ndarray

    @property
    def iterations(self) -> int:
        return len(self.history)

    def contraction_factor(self, floor: float = 0.0) -> float:
        """Largest ratio of successive iterate distances above ``floor``."""
        h = [d for d in self.history if d > floor]
        ratios = [h[i + 1] / h[i] for i in range(len(h) - 1) if h[i] > 0]
        return max(ratios) if ratios else 0.0

    def ratios(self, floor: float = 0.0) -> list:
        h = [d for d in self.history if d > floor]
        return [h[i + 1] / h[i] for i in range(len(h) - 1) if h[i] > 0]


def picard_iterate(
    dyn: Dynamics,
    U_a: np.ndarray,
    t_a: float,
    t_b: float,
    dt: float,
    *,
    tol: float,
    max_iters: int,
    start: str = "zero",
    perturbation: float = 0.05,
    seed: int = 0,
    raise_on_failure: bool = True,
) -> PicardResult:
    """Iterate the discrete Duhamel map on the nodes of ``[t_a, t_b]``."""
    g = dyn.grid
    M = max(1, int(math.ceil((t_b - t_a) / dt - 1e-9)))
    times = t_a + np.arange(M + 1) * ((t_b - t_a) / M)
    h = (t_b - t_a) / M
    z = g.k_squared * h
    Eh = np.exp(-z)
    phi1, phi2 = _phi_functions(z)
    w_prev, w_next = h * (phi1 - phi2), h * phi2

    def duhamel(N: np.ndarray) -> np.ndarray:
        out = np.zeros_like(N)
        for n in range(M):
            out[n + 1] = Eh * out[n] + w_prev * N[n] + w_next * N[n + 1]
        return out

    shape = (M + 1,) + U_a.shape
    linear = np.empty(shape, complex)
    for n in range(M + 1):
        linear[n] = dyn.exp_factor(times[n] - t_a) * U_a
    if not dyn.forcing.is_zero:
        src = np.stack([dyn.forcing_terms(t)[0] for t in times])
        linear += duhamel(src)

    if start == "zero":
        U = np.zeros(shape, complex)
    elif start == "linear":
        U = linear.copy()
    elif start == "perturbed":
        from .initial import random_solenoidal_hat

        rng = np.random.default_rng(seed)
        scale = float(np.max(_l2_norms(linear, g))) or 1.0
        pert = random_solenoidal_hat(g, rng, kmax=4, count=2 * (M + 1))
        pert = pert.reshape((M + 1, 6) + g.spectral_shape)
        U = linear + perturbation * scale * pert
    else:
        raise ValueError(f"unknown Picard start {start!r}")

    history: list[float] = []
    for _ in range(max_iters):
        N = np.stack([dyn.nonlinear(times[n], U[n]) for n in range(M + 1)])
        U_new = linear + duhamel(N)
        if not np.all(np.isfinite(U_new)):
            raise PicardDivergenceError("Picard iterates became non-finite", history)
        dist = float(np.max(_l2_norms(U_new - U, g)))
        history.append(dist)
        U = U_new
        if dist <= tol:
            return PicardResult(times, U, history, linear)
    if raise_on_failure:
        raise PicardDivergenceError(
            f"Picard iteration did not reach tol={tol:g} in {max_iters} iterations "
            f"(last distance {history[-1]:.3e})",
            history,
        )
    return PicardResult(times, U, history, linear)


def _record(traj: Trajectory, dyn: Dynamics, t: float, U: np.ndarray, evaluators, keep: bool):
    """Store a snapshot and/or per-gamma ledger samples for ``(t, U)``."""
    state = None
    needs_full = keep or any(not ev.fast for ev in evaluators.values())
    if needs_full:
        state = dyn.make_state(t, U)
    else:
        g = dyn.grid
        _, f_hat, g_hat = dyn.forcing_terms(t)
        state = SimState(
            t=float(t),
            u=VectorField(g, spectral=U[0:3]),
            b=VectorField(g, spectral=U[3:6]),
            p=None,
            q=None,
            F=None if f_hat is None else TensorField(g, spectral=f_hat),
            G=None if g_hat is None else TensorField(g, spectral=g_hat),
        )
    for gamma, ev in evaluators.items():
        row = ev.rates(state)
        row["t"] = float(t)
        traj.samples.setdefault(gamma, []).append(row)
    if keep:
        traj.append(state)
    return state


def _evaluators(config: SimConfig, gammas) -> dict:
    out = {0.0: LedgerEvaluator(config.grid, Weight(0.0))}
    for gamma in gammas:
        gamma = float(gamma)
        if gamma != 0.0:
            out[gamma] = LedgerEvaluator(config.grid, Weight(gamma))
    return out


def _finish_diagnostics(traj: Trajectory, config: SimConfig) -> None:
    rows = traj.samples.get(0.0, [])
    every = config.ledger_every
    for i in range(0, len(rows) - 1, every):
        j = min(i + every, len(rows) - 1)
        traj.diagnostics.append(
            ledger_from_samples([r["t"] for r in rows[i : j + 1]], rows[i : j + 1])
        )


def _resolve_inputs(config: SimConfig, initial, forcing):
    if initial is None:
        u0, b0 = initial_fields(config.initial, config.grid, config.seed)
    else:
        u0, b0 = initial
    if forcing is None:
        forcing = config.forcing.build(config.grid)
    return u0, b0, forcing


def step(state: SimState, dt: float, config: SimConfig, forcing: Forcing | None = None) -> SimState:
    """Advance one integrating-factor RK4 step."""
    if forcing is None:
        forcing = config.forcing.build(config.grid)
    dyn = Dynamics(config, forcing)
    U = _stack(state.u, state.b)
    U_new = dyn.rk4_step(state.t, U, dt)
    _check_finite(U_new, state.t + dt, state)
    return dyn.make_state(state.t + dt, U_new)


def solve_mhdg(
    config: SimConfig,
    *,
    initial=None,
    forcing: Forcing | None = None,
    ledger_gammas=None,
) -> Trajectory:
    """Integrate the mollified system on ``[0, t_end]``.

    Snapshots are kept every ``snapshot_every`` steps (always including both
    ends); unweighted ledger samples are recorded every step, weighted ones
    for each exponent in ``ledger_gammas`` (default ``config.ledger_gammas``).
    """
    u0, b0, forcing = _resolve_inputs(config, initial, forcing)
    gammas = config.ledger_gammas if ledger_gammas is None else ledger_gammas
    evaluators = _evaluators(config, gammas)
    dyn = Dynamics(config, forcing)
    traj = Trajectory(config.grid)
    times = config.step_times()
    n_steps = len(times) - 1
    U = _stack(u0, b0)
    last = _record(traj, dyn, times[0], U, evaluators, keep=True)

    if config.driver == "stepper":
        for n in range(n_steps):
            U_new = dyn.rk4_step(times[n], U, times[n + 1] - times[n])
            _check_finite(U_new, times[n + 1], last)
            U = U_new
            keep = (n + 1) % config.snapshot_every == 0 or n + 1 == n_steps
            st = _record(traj, dyn, times[n + 1], U, evaluators, keep)
            if keep:
                last = st
    else:
        window = config.picard_window or config.t_end
        per_window = max(1, int(round(window / config.dt)))
        histories = []
        n = 0
        while n < n_steps:
            m = min(per_window, n_steps - n)
            res = picard_iterate(
                dyn,
                U,
                times[n],
                times[n + m],
                config.dt,
                tol=config.picard.tol,
                max_iters=config.picard.max_iters,
                start=config.picard.start,
                perturbation=config.picard.perturbation,
                seed=config.seed,
            )
            histories.append(res.history)
            for k in range(1, m + 1):
                keep = (n + k) % config.snapshot_every == 0 or n + k == n_steps
                st = _record(traj, dyn, times[n + k], res.U[k], evaluators, keep)
                if keep:
                    last = st
            U = res.U[-1]
            n += m
        traj.info["picard_histories"] = histories
    _finish_diagnostics(traj, config)
    return traj


def picard_solve(
    config: SimConfig,
    window=None,
    *,
    initial=None,
    forcing: Forcing | None = None,
    start: str | None = None,
    warn_horizon: bool = True,
) -> Trajectory:
    """Single Picard fixed point on ``window`` (default ``[0, t_end]``) from the initial data."""
    u0, b0, forcing = _resolve_inputs(config, initial, forcing)
    t_a, t_b = (0.0, config.t_end) if window is None else window
    if warn_horizon:
        T0 = existence_time(u0, b0, forcing, config.epsilon, config.existence_constant, T1=t_b - t_a)
        if t_b - t_a > T0 * (1 + 1e-12):
            warnings.warn(
                f"window length {t_b - t_a:.4g} exceeds the existence time {T0:.4g}",
                RuntimeWarning,
                stacklevel=2,
            )
    dyn = Dynamics(config, forcing)
    res = picard_iterate(
        dyn,
        _stack(u0, b0),
        t_a,
        t_b,
        config.dt,
        tol=config.picard.tol,
        max_iters=config.picard.max_iters,
        start=config.picard.start if start is None else start,
        perturbation=config.picard.perturbation,
        seed=config.seed,
    )
    traj = Trajectory(config.grid)
    evaluators = _evaluators(config, config.ledger_gammas)
    for t, U in zip(res.times, res.U):
        _record(traj, dyn, t, U, evaluators, keep=True)
    _finish_diagnostics(traj, config)
    traj.info["picard_history"] = res.history
    traj.info["contraction_factor"] = res.contraction_factor()
    return traj


@dataclass
class DriftSeries:
    """Prescribed drifts ``(v, c)`` at increasing node times (spectral, shape ``(n, 6, ...)``)."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray

    @classmethod
    def from_fields(cls, times, v_fields, c_fields) -> DriftSeries:
        v_fields, c_fields = list(v_fields), list(c_fields)
        if len(v_fields) != len(times) or len(c_fields) != len(times):
            raise ValueError("drift series length does not match its times")
        grid = v_fields[0].grid
        if any(f.grid != grid for f in v_fields + c_fields):
            raise ValueError("drift fields must share one grid")
        vals = np.stack([_stack(v, c) for v, c in zip(v_fields, c_fields)])
        return cls(grid, np.asarray(times, dtype=float), vals)

    @classmethod
    def from_trajectory(cls, traj: Trajectory) -> DriftSeries:
        return cls.from_fields(traj.times, [s.u for s in traj.states], [s.b for s in traj.states])

    def swapped(self) -> DriftSeries:
        vals = np.concatenate([self.values[:, 3:6], self.values[:, 0:3]], axis=1)
        return DriftSeries(self.grid, self.times, vals)

    def lookup(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"no drift sample at t = {t:.12g}")
        return self.values[i]


def solve_ad(
    config: SimConfig,
    v: DriftSeries,
    c: DriftSeries | None = None,
    *,
    initial=None,
    forcing: Forcing | None = None,
    mollify_drift: bool = True,
) -> Trajectory:
    """Linear advection-diffusion problem with prescribed drifts.

    ``v`` holds both drifts when ``c`` is omitted; otherwise ``v`` and
    ``c`` are series whose first three (resp. last three) rows are used.
    The drift nodes must coincide with the configured time grid; the
    problem is linear in ``(u, b)`` so the Picard iteration converges on the
    whole horizon at once.
    """
    series = v
    if c is not None:
        if not np.array_equal(v.times, c.times) or v.grid != c.grid:
            raise ValueError("drift series disagree on times or grid")
        vals = np.concatenate([v.values[:, 0:3], c.values[:, 3:6]], axis=1)
        series = DriftSeries(v.grid, v.times, vals)
    if series.grid != config.grid:
        raise ValueError("drift grid does not match the configured grid")
    times = config.step_times()
    if len(series.times) != len(times) or np.max(np.abs(series.times - times)) > 1e-9 * max(
        1.0, config.t_end
    ):
        raise ValueError("drift times do not match the configured time grid")
    div = np.abs(divergence_hat(series.values[:, 0:3].swapaxes(0, 1), config.grid))
    div = max(div.max(), np.abs(divergence_hat(series.values[:, 3:6].swapaxes(0, 1), config.grid)).max())
    scale = max(1.0, float(np.max(np.abs(series.values))) * float(np.sqrt(config.grid.k_squared.max())))
    if div > 1e-10 * scale:
        raise ValueError("prescribed drifts are not divergence-free")

    u0, b0, forcing = _resolve_inputs(config, initial, forcing)
    dyn = Dynamics(config, forcing, drift=series.lookup, mollify_drift=mollify_drift)
    res = picard_iterate(
        dyn,
        _stack(u0, b0),
        0.0,
        config.t_end,
        config.dt,
        tol=config.picard.tol,
        max_iters=config.picard.max_iters,
        start="zero",
        seed=config.seed,
    )
    traj = Trajectory(config.grid)
    evaluators = _evaluators(config, config.ledger_gammas)
    for t, U in zip(res.times, res.U):
        _record(traj, dyn, t, U, evaluators, keep=True)
    _finish_diagnostics(traj, config)
    traj.info["picard_history"] = res.history
    return traj


def trajectory_distance(a: Trajectory, b: Trajectory) -> float:
    """``L^2`` in space-time distance between two trajectories on shared snapshot times."""
    ta, tb = a.times, b.times
    if len(ta) != len(tb) or np.max(np.abs(ta - tb)) > 1e-12 * max(1.0, ta[-1]):
        raise ValueError("trajectories are sampled at different times")
    sq = []
    for sa, sb in zip(a.states, b.states):
        D = _stack(sa.u, sa.b) - _stack(sb.u, sb.b)
        sq.append(float(_l2_norms(D[None], a.grid)[0]) ** 2)
    if len(ta) == 1:
        return math.sqrt(sq[0])
    return math.sqrt(float(np.trapezoid(sq, ta)))


def epsilon_convergence_study(config: SimConfig, eps_list, *, initial=None, forcing=None) -> dict:
    """Distances between solutions at consecutive mollification scales."""
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    for e in eps_list:
        _check_scale(e, config.grid)
    u0, b0, forcing = _resolve_inputs(config, initial, forcing)
    prev = None
    distances = []
    for e in eps_list:
        cfg = replace(config, epsilon=e, ledger_gammas=())
        traj = solve_mhdg(cfg, initial=(u0, b0), forcing=forcing)
        if prev is not None:
            distances.append(trajectory_distance(prev, traj))
        prev = traj
    decreasing = all(b < a for a, b in zip(distances, distances[1:]))
    return {"eps_list": eps_list, "distances": distances, "monotone_decreasing": decreasing}


# ---------------------------------------------------------------------------
# calibration of the existence-time constant


@dataclass(frozen=True)
class CalibrationCase:
    """One battery entry: initial data on a grid at a mollification scale."""

    initial: InitialSpec
    epsilon_fraction: float
    n_per_axis: int = 16
    seed: int = 0


DEFAULT_CALIBRATION_BATTERY = (
    CalibrationCase(InitialSpec("orszag_tang", amplitude=10.0), 0.1),
    CalibrationCase(InitialSpec("orszag_tang", amplitude=20.0), 0.1),
    CalibrationCase(InitialSpec("orszag_tang", amplitude=20.0), 0.2),
    CalibrationCase(InitialSpec("taylor_green", amplitude=40.0), 0.2),
    CalibrationCase(InitialSpec("random", amplitude=400.0, kmax=3), 0.2, seed=1),
)


def measured_contraction(
    config: SimConfig,
    T: float,
    *,
    initial=None,
    nodes: int = 20,
    iterations: int = 8,
) -> float:
    """Largest successive-distance ratio of the Picard map on ``[0, T]``."""
    u0, b0, forcing = _resolve_inputs(config, initial, None)
    dyn = Dynamics(config, forcing)
    U0 = _stack(u0, b0)
    floor = 1e-13 * float(_l2_norms(U0[None], config.grid)[0])
    try:
        res = picard_iterate(
            dyn, U0, 0.0, T, T / nodes, tol=floor, max_iters=iterations, raise_on_failure=False
        )
    except PicardDivergenceError:
        return math.inf
    return res.contraction_factor(floor=floor)


def calibrate_existence_constant(
    battery=DEFAULT_CALIBRATION_BATTERY,
    *,
    target: float = 0.9,
    t_max: float = 4.0,
    bisections: int = 24,
) -> dict:
    """Smallest ``c`` over the battery for which the contraction at ``T0`` is ``target``.

    For each case the horizon ``T*`` with measured contraction ``target`` is
    located by bisection in ``log T``; the case then admits
    ``c = T* (||U0||)^2 / eps^3``.  Cases whose contraction stays below
    ``target`` up to ``t_max`` do not constrain ``c``.
    """
    rows = []
    for case in battery:
        grid = Grid(case.n_per_axis)
        eps = case.epsilon_fraction * grid.box_length
        cfg = SimConfig(grid, epsilon=eps, dt=1.0, t_end=1.0, initial=case.initial, seed=case.seed)
        u0, b0 = initial_fields(case.initial, grid, case.seed)
        norm = float(_l2_norms(_stack(u0, b0)[None], grid)[0])
        lo, hi = 1e-8, t_max
        if measured_contraction(cfg, hi, initial=(u0, b0)) < target:
            rows.append({"case": repr(case), "T_star": None, "c": None, "norm": norm})
            continue
        for _ in range(bisections):
            mid = math.sqrt(lo * hi)
            if measured_contraction(cfg, mid, initial=(u0, b0)) < target:
                lo = mid
            else:
                hi = mid
        t_star = lo
        rows.append({"case": repr(case), "T_star": t_star, "c": t_star * norm**2 / eps**3, "norm": norm})
    constrained = [r["c"] for r in rows if r["c"] is not None]
    if not constrained:
        raise ValueError("no battery case reached the target contraction; enlarge the data")
    return {"c": min(constrained), "target": target, "cases": rows}
