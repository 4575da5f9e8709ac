"""Pressure recovery, energy ledgers, local energy pairing and Gronwall-type bounds.

Ledger sign conventions
-----------------------
For the weight ``w`` and ``U = (u, b)`` the mollified system satisfies

    d/dt int |U|^2 w = - 2 int |grad U|^2 w
                       - int grad|U|^2 . grad w          (weight_gradient_term)
                       + int |U|^2 v . grad w            (transport_v)
                       + 2 int p u . grad w              (pressure_u)
                       + 2 int q b . grad w              (q_b)
                       - 2 int (u . b) c . grad w        (transport_c)
                       - 2 int F_ij d_i u_j w            (forcing_F_grad)
                       - 2 int F_ij u_j d_i w            (forcing_F_weight)
                       + the same two terms with (G, b)  (forcing_G_grad, forcing_G_weight)

Integrating over ``[t_a, t_b]``, ``LHS = energy_b + dissipation`` and
``RHS = energy_a + (all remaining terms)``; ``slack = RHS - LHS`` is
nonnegative in the direction of the weighted energy inequality and vanishes
(up to discretization) for the mollified system.

Weighted integrals are evaluated on a grid refined by a factor of two, where
every cubic product of dealiased fields is alias free; the weight is
sampled there and differentiated spectrally, so discrete integration by parts
holds exactly and the slack reduces to time-quadrature and stepping error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson, trapezoid

from .spectral import (
    Grid,
    ScalarField,
    VectorField,
    divergence_hat,
    enforce_hermitian,
    forward,
    gradient_hat,
    inverse,
    outer_product,
    pad_hat,
    riesz_riesz_hat,
    spectral_inner,
)
from .weights import Cutoff, Weight, _smooth_step, weighted_lp_norm

LEDGER_TERMS = (
    "kinetic_magnetic_energy_a",
    "kinetic_magnetic_energy_b",
    "dissipation",
    "weight_gradient_term",
    "transport_v",
    "transport_c",
    "pressure_u",
    "q_b",
    "forcing_F_grad",
    "forcing_F_weight",
    "forcing_G_grad",
    "forcing_G_weight",
)
RATE_TERMS = LEDGER_TERMS[3:]


@dataclass
class EnergyLedger:
    t_a: float
    t_b: float
    terms: dict
    slack: float = field(init=False)

    def __post_init__(self) -> None:
        missing = set(LEDGER_TERMS) - set(self.terms)
        if missing:
            raise ValueError(f"ledger is missing terms {sorted(missing)}")
        self.terms = {name: float(self.terms[name]) for name in LEDGER_TERMS}
        self.slack = self.rhs - self.lhs

    @property
    def lhs(self) -> float:
        return self.terms["kinetic_magnetic_energy_b"] + self.terms["dissipation"]

    @property
    def rhs(self) -> float:
        return self.terms["kinetic_magnetic_energy_a"] + sum(self.terms[n] for n in RATE_TERMS)

    @classmethod
    def zero(cls, t_a: float = 0.0, t_b: float = 0.0) -> EnergyLedger:
        return cls(t_a, t_b, {name: 0.0 for name in LEDGER_TERMS})

    def as_row(self) -> list[float]:
        return [self.t_a, self.t_b] + [self.terms[n] for n in LEDGER_TERMS] + [self.slack]


# ---------------------------------------------------------------------------
# pressure and q


def _zero_tensor(grid: Grid) -> np.ndarray:
    return np.zeros((3, 3) + grid.spectral_shape, complex)


def compute_p_q_hat(u_hat, b_hat, v_hat, c_hat, f_hat, g_hat, grid: Grid):
    """Array-level ``(p, q)`` for dealiased inputs, using 2/3-rule products on ``grid``."""
    u, b = inverse(u_hat, grid), inverse(b_hat, grid)
    v, c = inverse(v_hat, grid), inverse(c_hat, grid)
    mask = grid.dealias_mask
    tp = forward(u[:, None] * v[None, :] - b[:, None] * c[None, :]) * mask
    tq = forward(v[:, None] * b[None, :] - c[:, None] * u[None, :]) * mask
    enforce_hermitian(tp)
    enforce_hermitian(tq)
    if f_hat is not None:
        tp -= f_hat * mask
    if g_hat is not None:
        tq -= g_hat * mask
    return riesz_riesz_hat(tp, grid), riesz_riesz_hat(tq, grid)


def compute_p_q(u: VectorField, b: VectorField, v: VectorField, c: VectorField, F=None, G=None):
    """``p = sum R_i R_j (u_i v_j - b_i c_j - F_ij)``, ``q = sum R_i R_j (v_i b_j - c_i u_j - G_ij)``.

    Products are formed without aliasing on a refined grid and restricted to
    the dealiased band, matching the solver's nonlinear term.  ``F`` or ``G``
    may be ``None`` for zero forcing.
    """
    grid = u.grid
    for other in (b, v, c, F, G):
        if other is not None and other.grid != grid:
            raise ValueError("grid mismatch")
    tp = outer_product(u, v).spectral - outer_product(b, c).spectral
    tq = outer_product(v, b).spectral - outer_product(c, u).spectral
    mask = grid.dealias_mask
    if F is not None:
        tp = tp - F.spectral * mask
    if G is not None:
        tq = tq - G.spectral * mask
    return (
        ScalarField(grid, spectral=riesz_riesz_hat(tp, grid)),
        ScalarField(grid, spectral=riesz_riesz_hat(tq, grid)),
    )


def pressure_split_norms(state, gamma: float) -> dict:
    """Weighted norms of the two parts of ``p`` and ``q``.

    The quadratic part ``R_i R_j (u_i v_j - b_i c_j)`` is measured in
    ``L^{6/5}`` with weight exponent ``6 gamma / 5`` and the forcing part
    ``-R_i R_j F_ij`` in ``L^2_{w_gamma}``; likewise for ``q``.
    """
    if not 0 <= gamma <= 2:
        raise ValueError(f"weight exponent must lie in [0, 2], got {gamma!r}")
    g = state.u.grid
    p1, q1 = compute_p_q(state.u, state.b, state.v, state.c)
    mask = g.dealias_mask
    zero = ScalarField.zeros(g)
    p2 = zero if state.F is None else ScalarField(g, spectral=-riesz_riesz_hat(state.F.spectral * mask, g))
    q2 = zero if state.G is None else ScalarField(g, spectral=-riesz_riesz_hat(state.G.spectral * mask, g))
    w65, w2 = Weight(6.0 * gamma / 5.0), Weight(gamma)
    return {
        "p_quadratic_L6/5": weighted_lp_norm(p1, 6.0 / 5.0, w65),
        "q_quadratic_L6/5": weighted_lp_norm(q1, 6.0 / 5.0, w65),
        "p_forcing_L2": weighted_lp_norm(p2, 2.0, w2),
        "q_forcing_L2": weighted_lp_norm(q2, 2.0, w2),
    }


def momentum_rhs_hat(u_hat, b_hat, v_hat, c_hat, p_hat, q_hat, f_hat, g_hat, grid: Grid):
    """Unprojected right-hand sides assembled with the supplied ``p`` and ``q``."""
    u, b = inverse(u_hat, grid), inverse(b_hat, grid)
    v, c = inverse(v_hat, grid), inverse(c_hat, grid)
    mask = grid.dealias_mask
    su = forward(v[:, None] * u[None, :] - c[:, None] * b[None, :]) * mask
    sb = forward(v[:, None] * b[None, :] - c[:, None] * u[None, :]) * mask
    ksq = grid.k_squared
    ru = -ksq * u_hat - divergence_hat(su, grid) - gradient_hat(p_hat, grid)
    rb = -ksq * b_hat - divergence_hat(sb, grid) - gradient_hat(q_hat, grid)
    if f_hat is not None:
        ru = ru + divergence_hat(f_hat * mask, grid)
    if g_hat is not None:
        rb = rb + divergence_hat(g_hat * mask, grid)
    return ru, rb


def relative_divergence(r_hat: np.ndarray, grid: Grid) -> float:
    """``max |k . r(k)| / max |k| |r(k)|``; zero for a zero field."""
    k = grid.wavenumbers
    kmag = np.sqrt(grid.k_squared)
    num = float(np.max(np.abs(k[0] * r_hat[0] + k[1] * r_hat[1] + k[2] * r_hat[2])))
    den = float(np.max(kmag * np.sqrt(np.sum(np.abs(r_hat) ** 2, axis=0))))
    return num / den if den > 0 else 0.0


def transport_cancellations(u: VectorField, b: VectorField, v: VectorField, c: VectorField):
    """Relative sizes of ``<(v.grad)b, b>`` and ``<(c.grad)b, u> + <(c.grad)u, b>``.

    Both vanish for divergence-free ``v`` and ``c``.  Each is divided by the
    matching Cauchy-Schwarz bound, so the values are scale free.  Products
    are taken on the grid itself; for dealiased inputs the aliased modes fall
    outside the band of the second factor and do not enter the pairing.
    """
    g = u.grid

    def advect(a: VectorField, w: VectorField) -> np.ndarray:
        da = inverse(gradient_hat(a.spectral, g), g)
        return np.einsum("i...,ij...->j...", w.physical, da)

    def pair(x, y):
        return float(np.sum(x * y) * g.cell_volume)

    def norm(x):
        return math.sqrt(pair(x, x))

    vb = advect(b, v)
    cb, cu = advect(b, c), advect(u, c)
    s1 = norm(vb) * norm(b.physical)
    s2 = norm(cb) * norm(u.physical) + norm(cu) * norm(b.physical)
    r1 = abs(pair(vb, b.physical)) / s1 if s1 > 0 else 0.0
    r2 = abs(pair(cb, u.physical) + pair(cu, b.physical)) / s2 if s2 > 0 else 0.0
    return r1, r2


# ---------------------------------------------------------------------------
# instantaneous integrands


class LedgerEvaluator:
    """Instantaneous ledger rates for one weight on one grid.

    ``weight`` is a :class:`Weight`, or an array of weight samples on the
    refined grid (used for compactly supported test functions).
    """

    def __init__(self, grid: Grid, weight=None, *, refine: int = 2, spectral_fast_path: bool = True):
        self.grid = grid
        if weight is None:
            weight = Weight(0.0)
        self.constant = isinstance(weight, Weight) and weight.gamma == 0
        self.fast = self.constant and spectral_fast_path
        self.big = grid.padded(refine)
        if not self.fast:
            if isinstance(weight, Weight):
                from .weights import weight_field

                w = weight_field(weight, self.big).physical
            else:
                w = np.asarray(weight, dtype=float)
                if w.shape != self.big.shape:
                    raise ValueError("weight samples must live on the refined grid")
            self.w = w
            gw_hat = gradient_hat(forward(w), self.big)
            self.gw = inverse(gw_hat, self.big)

    def _up(self, a_hat):
        return inverse(pad_hat(a_hat, self.grid, self.big), self.big)

    def rates(self, state) -> dict:
        if self.fast:
            return self._rates_spectral(state)
        return self._rates_physical(state)

    def _rates_spectral(self, s) -> dict:
        g = self.grid
        ksq = g.k_squared
        u_hat, b_hat = s.u.spectral, s.b.spectral
        energy = spectral_inner(u_hat, u_hat, g) + spectral_inner(b_hat, b_hat, g)
        diss = 2.0 * (
            spectral_inner(ksq * u_hat, u_hat, g) + spectral_inner(ksq * b_hat, b_hat, g)
        )
        out = {name: 0.0 for name in RATE_TERMS}
        out["energy"] = energy
        out["dissipation"] = diss
        if s.F is not None:
            du = gradient_hat(u_hat, g)
            out["forcing_F_grad"] = -2.0 * spectral_inner(s.F.spectral * g.dealias_mask, du, g)
        if s.G is not None:
            db = gradient_hat(b_hat, g)
            out["forcing_G_grad"] = -2.0 * spectral_inner(s.G.spectral * g.dealias_mask, db, g)
        return out

    def _rates_physical(self, s) -> dict:
        g, big = self.grid, self.big
        dv = big.cell_volume
        w, gw = self.w, self.gw
        u = self._up(s.u.spectral)
        b = self._up(s.b.spectral)
        usq = np.sum(u * u, axis=0) + np.sum(b * b, axis=0)
        out = {"energy": float(np.sum(usq * w) * dv)}

        v = self._up(s.v.spectral)
        out["transport_v"] = float(np.sum(usq * np.sum(v * gw, axis=0)) * dv)
        del v, usq
        c = self._up(s.c.spectral)
        out["transport_c"] = float(-2.0 * np.sum(np.sum(u * b, axis=0) * np.sum(c * gw, axis=0)) * dv)
        del c
        p = self._up(s.p.spectral)
        out["pressure_u"] = float(2.0 * np.sum(p * np.sum(u * gw, axis=0)) * dv)
        del p
        q = self._up(s.q.spectral)
        out["q_b"] = float(2.0 * np.sum(q * np.sum(b * gw, axis=0)) * dv)
        del q

        mask = g.dealias_mask
        fields = (
            (u, s.u.spectral, None if s.F is None else s.F.spectral * mask, "F"),
            (b, s.b.spectral, None if s.G is None else s.G.spectral * mask, "G"),
        )
        diss = 0.0
        wgrad = 0.0
        for phys, a_hat, t_hat, tag in fields:
            f_grad = 0.0
            f_weight = 0.0
            for j in range(3):
                grad_j = self._up(gradient_hat(a_hat[j], g))
                diss += float(np.sum(np.sum(grad_j * grad_j, axis=0) * w))
                wgrad += float(np.sum(phys[j] * np.sum(grad_j * gw, axis=0)))
                if t_hat is not None:
                    t_col = self._up(t_hat[:, j])
                    f_grad += float(np.sum(np.sum(t_col * grad_j, axis=0) * w))
                    f_weight += float(np.sum(np.sum(t_col * gw, axis=0) * phys[j]))
            out[f"forcing_{tag}_grad"] = -2.0 * f_grad * dv
            out[f"forcing_{tag}_weight"] = -2.0 * f_weight * dv
        out["dissipation"] = 2.0 * diss * dv
        out["weight_gradient_term"] = -2.0 * wgrad * dv
        return out


# ---------------------------------------------------------------------------
# ledgers over trajectories


def _integrate(y: np.ndarray, t: np.ndarray, rule: str) -> float:
    if len(t) < 2:
        return 0.0
    if rule == "trapezoid":
        return float(trapezoid(y, t))
    if rule == "simpson":
        return float(simpson(y, x=t))
    raise ValueError(f"unknown quadrature rule {rule!r}")


def ledger_from_samples(times, samples, rule: str = "trapezoid") -> EnergyLedger:
    """Assemble a ledger from instantaneous rate samples at increasing times."""
    t = np.asarray(times, dtype=float)
    if len(t) == 0:
        raise ValueError("no samples in window")
    terms = {
        "kinetic_magnetic_energy_a": samples[0]["energy"],
        "kinetic_magnetic_energy_b": samples[-1]["energy"],
        "dissipation": _integrate(np.array([s["dissipation"] for s in samples]), t, rule),
    }
    for name in RATE_TERMS:
        terms[name] = _integrate(np.array([s.get(name, 0.0) for s in samples]), t, rule)
    return EnergyLedger(float(t[0]), float(t[-1]), terms)


def _window_indices(times, window) -> np.ndarray:
    t_a, t_b = window
    times = np.asarray(times, dtype=float)
    if len(times) == 0:
        raise ValueError("empty trajectory")
    scale = max(1.0, abs(t_b))
    tol = 1e-9 * scale
    if t_a < times[0] - tol or t_b > times[-1] + tol or t_b < t_a:
        raise ValueError(
            f"window [{t_a}, {t_b}] is not covered by the trajectory "
            f"[{times[0]}, {times[-1]}]"
        )
    idx = np.nonzero((times >= t_a - tol) & (times <= t_b + tol))[0]
    if abs(times[idx[0]] - t_a) > tol or abs(times[idx[-1]] - t_b) > tol:
        raise ValueError("window endpoints must coincide with sample times")
    return idx


def _trajectory_samples(traj, gamma: float, evaluator_factory):
    key = float(gamma)
    recorded = getattr(traj, "samples", {}).get(key)
    if recorded:
        return [s["t"] for s in recorded], recorded
    ev = evaluator_factory()
    times, rows = [], []
    for st in traj.states:
        times.append(st.t)
        rows.append(ev.rates(st))
    return times, rows


def global_energy_ledger(traj, window=None, rule: str = "trapezoid") -> EnergyLedger:
    """Unweighted energy equality over ``window`` (defaults to the whole trajectory)."""
    return weighted_energy_ledger(traj, 0.0, window, rule=rule)


def weighted_energy_ledger(
    traj, gamma: float, window=None, rule: str = "trapezoid", *, reg_epsilon: float = 0.0
) -> EnergyLedger:
    if not 0 <= gamma <= 2:
        raise ValueError(f"weight exponent must lie in [0, 2], got {gamma!r}")
    grid = traj.grid
    times, rows = _trajectory_samples(
        traj, gamma, lambda: LedgerEvaluator(grid, Weight(gamma, reg_epsilon))
    )
    if window is None:
        window = (times[0], times[-1])
    idx = _window_indices(times, window)
    return ledger_from_samples([times[i] for i in idx], [rows[i] for i in idx], rule)


# ---------------------------------------------------------------------------
# local energy pairing


def time_bump(t, t0: float, t1: float, eta: float):
    """``alpha((t - t0)/eta) - alpha((t - t1)/eta)`` and its time derivative.

    ``alpha`` is a smooth nondecreasing step, 0 below 1/2 and 1 above 1.
    """
    t = np.asarray(t, dtype=float)

    def alpha(s):
        return _smooth_step(2.0 * s - 1.0)

    def dalpha(s):
        x = 2.0 * s - 1.0
        inside = (x > 0) & (x < 1)
        xs = np.where(inside, x, 0.5)
        a = np.exp(-1.0 / xs)
        b = np.exp(-1.0 / (1.0 - xs))
        da = a / xs**2
        db = b / (1.0 - xs) ** 2
        d = (da * b + a * db) / (a + b) ** 2
        return np.where(inside, 2.0 * d, 0.0)

    s0, s1 = (t - t0) / eta, (t - t1) / eta
    return alpha(s0) - alpha(s1), (dalpha(s0) - dalpha(s1)) / eta


@dataclass(frozen=True)
class TestFunction:
    """Space-time test function ``alpha_{eta,t0,t1}(t) * phi_R(x - center)``."""

    t0: float
    t1: float
    eta: float
    radius: float
    center: tuple[float, float, float] | None = None

    def __post_init__(self) -> None:
        if not (self.eta > 0 and self.radius > 0 and self.t1 > self.t0):
            raise ValueError("test function needs eta > 0, radius > 0 and t1 > t0")

    @classmethod
    def from_spec(cls, spec: dict) -> TestFunction:
        allowed = {"t0", "t1", "eta", "radius", "center"}
        unknown = set(spec) - allowed
        if unknown:
            raise ValueError(f"unsupported test-function keys {sorted(unknown)}")
        try:
            return cls(
                float(spec["t0"]),
                float(spec["t1"]),
                float(spec["eta"]),
                float(spec["radius"]),
                None if spec.get("center") is None else tuple(spec["center"]),
            )
        except KeyError as exc:
            raise ValueError(f"test function spec lacks {exc.args[0]!r}") from None

    @property
    def support(self) -> tuple[float, float]:
        return (self.t0 + 0.5 * self.eta, self.t1 + self.eta)


def local_energy_residual(traj, test, rule: str = "trapezoid") -> float:
    """Pairing of the local energy balance with a nonnegative test function.

    Returns ``<d_t |U|^2/2 - Delta |U|^2/2 + |grad U|^2 + div(fluxes) - forcing, Phi>``
    which equals ``-<mu, Phi>`` for a defect measure ``mu``: zero (up to
    quadrature) for the mollified system, and ``<= tol`` for suitable solutions.
    """
    if isinstance(test, dict):
        test = TestFunction.from_spec(test)
    if not isinstance(test, TestFunction):
        raise ValueError(f"unsupported test function {test!r}")
    grid = traj.grid
    states = traj.states
    times = np.array([s.t for s in states])
    lo, hi = test.support
    if lo < times[0] or hi > times[-1]:
        raise ValueError("test function support leaves the trajectory window")
    big = grid.padded(2)
    cut = Cutoff(test.radius, test.center)
    center = np.asarray(cut.center_on(big))
    room = float(np.min(np.minimum(center, big.box_length - center)))
    if 2 * test.radius > room:
        raise ValueError("spatial support of the test function leaves the box")
    psi = cut.profile(big.distance_to(cut.center_on(big)))
    ev = LedgerEvaluator(grid, psi)
    alpha, dalpha = time_bump(times, test.t0, test.t1, test.eta)
    active = np.nonzero((alpha != 0) | (dalpha != 0))[0]
    integrand = np.zeros(len(times))
    for i in active:
        r = ev.rates(states[i])
        rate = -r["dissipation"] + sum(r[name] for name in RATE_TERMS)
        integrand[i] = r["energy"] * dalpha[i] + alpha[i] * rate
    return -0.5 * _integrate(integrand, times, rule)


# ---------------------------------------------------------------------------
# Gronwall machinery and a priori bounds


@dataclass(frozen=True)
class GronwallCertificate:
    A: float
    B: float
    T: float
    T0: float
    T1: float
    bound: float


def gronwall_bound(A: float, B: float, T: float, T0: float) -> GronwallCertificate:
    """For ``alpha <= A + B int_0^t (1 + alpha^3)``: ``alpha <= sqrt(2)(A + B T0)`` on ``[0, T1]``."""
    if A < 0 or B < 0:
        raise ValueError("A and B must be nonnegative")
    if not (T > 0 and T0 > 0):
        raise ValueError("horizons must be positive")
    base = A + B * T0
    T1 = min(T, T0)
    if B > 0 and base > 0:
        T1 = min(T1, 1.0 / (4.0 * B * base**2))
    return GronwallCertificate(A, B, T, T0, T1, math.sqrt(2.0) * base)


class ConditionNotMetError(ValueError):
    """The smallness hypothesis of a conditional bound does not hold."""


def passive_control_bound(
    u0_norm: float,
    b0_norm: float,
    F_norm_sq_int: float,
    G_norm_sq_int: float,
    vc_L3_cubed_int: float,
    T: float,
    gamma: float,
    C_gamma: float = 1.0,
) -> float:
    """``(||U0||^2 + C ||(F,G)||_{L^2L^2_w}) exp(C (T + T^{1/3} ||(v,c)||^2_{L^3L^3_w}))``.

    Norms are weighted with ``w_gamma`` (``w_{3 gamma/2}`` for the drift);
    ``gamma`` only documents which weight the caller used.
    """
    del gamma
    vals = (u0_norm, b0_norm, F_norm_sq_int, G_norm_sq_int, vc_L3_cubed_int, T)
    if min(vals) < 0:
        raise ValueError("norms and horizons must be nonnegative")
    data = u0_norm**2 + b0_norm**2
    forcing = math.sqrt(F_norm_sq_int + G_norm_sq_int)
    drift = vc_L3_cubed_int ** (2.0 / 3.0)
    return (data + C_gamma * forcing) * math.exp(C_gamma * (T + T ** (1.0 / 3.0) * drift))


def active_control_bound(
    u0_norm: float,
    b0_norm: float,
    F_G_norm_sq_int: float,
    T0: float,
    gamma: float,
    C_gamma: float = 1.0,
) -> float:
    """``C (1 + ||U0||^2 + int ||(F,G)||^2)`` provided ``C (1 + ...)^2 T0 <= 1``."""
    del gamma
    if C_gamma < 1:
        raise ValueError("the active-control constant is at least 1")
    inner_sum = 1.0 + u0_norm**2 + b0_norm**2 + F_G_norm_sq_int
    if C_gamma * inner_sum**2 * T0 > 1.0:
        raise ConditionNotMetError(
            f"smallness condition fails: C (1 + ...)^2 T0 = {C_gamma * inner_sum**2 * T0:.6g} > 1"
        )
    return C_gamma * inner_sum


def calibrate_passive_constant(measured: float, data_sq: float, forcing: float, T: float, drift_sq: float) -> float:
    """Smallest ``C >= 0`` for which the passive bound dominates ``measured``."""
    from scipy.optimize import brentq

    def bound(C):
        return (data_sq + C * forcing) * math.exp(C * (T + T ** (1.0 / 3.0) * drift_sq))

    if measured <= bound(0.0):
        return 0.0
    hi = 1.0
    while bound(hi) < measured:
        hi *= 2.0
    return brentq(lambda C: bound(C) - measured, 0.0, hi, xtol=1e-14, rtol=1e-12)
