import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from mhdlab.energy import (
    LEDGER_TERMS,
    ConditionNotMetError,
    EnergyLedger,
    LedgerEvaluator,
    TestFunction,
    active_control_bound,
    calibrate_passive_constant,
    compute_p_q,
    global_energy_ledger,
    gronwall_bound,
    local_energy_residual,
    momentum_rhs_hat,
    passive_control_bound,
    pressure_split_norms,
    relative_divergence,
    time_bump,
    transport_cancellations,
    weighted_energy_ledger,
)
from mhdlab.evolution import SimConfig, SimState, Trajectory, solve_mhdg
from mhdlab.initial import ForcingSpec, InitialSpec
from mhdlab.spectral import Grid, ScalarField, VectorField

from .helpers import random_vectors

TestFunction.__test__ = False


def taylor_green_velocity(g):
    x, y, _ = g.coordinates
    zero = np.zeros(g.shape)
    return VectorField(
        g, physical=np.stack([np.sin(x) * np.cos(y) + zero, -np.cos(x) * np.sin(y) + zero, zero])
    )


@pytest.fixture(scope="module")
def forced_traj():
    cfg = SimConfig(
        grid=Grid(16),
        epsilon=0.8,
        dt=1e-3,
        t_end=0.02,
        initial=InitialSpec("orszag_tang", amplitude=1.0),
        forcing=ForcingSpec("mode", amplitude=1.0, mode=(1, 1, 0), omega=2.0),
        ledger_gammas=(1.5,),
    )
    return solve_mhdg(cfg)


class TestPressure:
    def test_taylor_green_pressure(self):
        g = Grid(16)
        u = taylor_green_velocity(g)
        zero = VectorField.zeros(g)
        p, q = compute_p_q(u, zero, u, zero)
        x, y, _ = g.coordinates
        expected = 0.25 * (np.cos(2 * x) + np.cos(2 * y)) + np.zeros(g.shape)
        np.testing.assert_allclose(p.physical, expected, atol=1e-13)
        np.testing.assert_allclose(q.physical, 0.0, atol=1e-15)

    def test_q_vanishes_for_self_drift(self, grid16):
        u, b = random_vectors(grid16, 3, count=2, kmax=4)
        _, q = compute_p_q(u, b, u, b)
        assert np.max(np.abs(q.physical)) < 1e-14

    def test_momentum_rhs_is_solenoidal(self, forced_traj):
        s = forced_traj.states[-1]
        ru, rb = momentum_rhs_hat(
            s.u.spectral, s.b.spectral, s.v.spectral, s.c.spectral, s.p.spectral, s.q.spectral,
            s.F.spectral, s.G.spectral, s.u.grid,
        )
        assert relative_divergence(ru, s.u.grid) < 1e-12
        assert relative_divergence(rb, s.u.grid) < 1e-12

    def test_wrong_pressure_is_detected(self, forced_traj):
        s = forced_traj.states[-1]
        g = s.u.grid
        ru, _ = momentum_rhs_hat(
            s.u.spectral, s.b.spectral, s.v.spectral, s.c.spectral, 0 * s.p.spectral, s.q.spectral,
            s.F.spectral, s.G.spectral, g,
        )
        assert relative_divergence(ru, g) > 1e-3

    def test_split_norms(self, forced_traj):
        from mhdlab.weights import Weight, weighted_lp_norm

        s = forced_traj.states[-1]
        norms = pressure_split_norms(s, 1.5)
        assert all(np.isfinite(v) and v > 0 for v in norms.values())
        p1, _ = compute_p_q(s.u, s.b, s.v, s.c)
        assert norms["p_quadratic_L6/5"] == weighted_lp_norm(p1, 1.2, Weight(1.8))
        with pytest.raises(ValueError):
            pressure_split_norms(s, 2.5)

    def test_split_parts_sum_to_pressure(self, forced_traj):
        from mhdlab.spectral import riesz_riesz_hat

        s = forced_traj.states[-1]
        g = s.u.grid
        p1, q1 = compute_p_q(s.u, s.b, s.v, s.c)
        p2 = -riesz_riesz_hat(s.F.spectral * g.dealias_mask, g)
        np.testing.assert_allclose(p1.spectral + p2, s.p.spectral, atol=1e-12)

    def test_relative_divergence_of_zero(self, grid16):
        assert relative_divergence(np.zeros((3,) + grid16.spectral_shape, complex), grid16) == 0.0

    def test_grid_mismatch(self):
        a, b = VectorField.zeros(Grid(8)), VectorField.zeros(Grid(16))
        with pytest.raises(ValueError):
            compute_p_q(a, b, a, a)


class TestCancellations:
    @given(seed=st.integers(0, 10**6))
    def test_transport_identities(self, seed):
        g = Grid(16)
        u, b, v, c = random_vectors(g, seed, count=4, kmax=5)
        r1, r2 = transport_cancellations(u, b, v, c)
        assert r1 < 1e-12 and r2 < 1e-12

    def test_compressible_drift_breaks_identity(self, grid16):
        x = grid16.coordinates[0]
        zero = np.zeros(grid16.shape)
        v = VectorField(grid16, physical=np.stack([np.sin(x) + zero, zero, zero]))
        b = VectorField(grid16, physical=np.stack([np.cos(x) + 1.0 + zero, zero, zero]))
        r1, _ = transport_cancellations(b, b, v, VectorField.zeros(grid16))
        assert r1 > 1e-3


class TestLedger:
    def test_missing_term(self):
        with pytest.raises(ValueError):
            EnergyLedger(0.0, 1.0, {"dissipation": 0.0})

    def test_zero_ledger(self):
        z = EnergyLedger.zero(0.0, 1.0)
        assert z.slack == 0.0
        assert len(z.as_row()) == len(LEDGER_TERMS) + 3

    def test_slack_is_rhs_minus_lhs(self):
        terms = {n: 0.0 for n in LEDGER_TERMS}
        terms.update(kinetic_magnetic_energy_a=3.0, kinetic_magnetic_energy_b=1.0, dissipation=1.5, pressure_u=0.25)
        assert EnergyLedger(0, 1, terms).slack == pytest.approx(0.75)

    def test_heat_decay_ledger(self):
        # u = exp(-t) sin(y) e_x solves the linear problem; E(t) = exp(-2t) L^3 / 2
        g = Grid(16)
        y = g.coordinates[1]
        zero = np.zeros(g.shape)
        traj = Trajectory(g)
        for t in np.linspace(0.0, 0.5, 501):
            u = VectorField(g, physical=np.stack([math.exp(-t) * np.sin(y) + zero, zero, zero]))
            traj.append(SimState(t, u, VectorField.zeros(g), ScalarField.zeros(g), ScalarField.zeros(g)))
        led = global_energy_ledger(traj)
        E0 = g.volume / 2
        assert led.terms["kinetic_magnetic_energy_a"] == pytest.approx(E0, rel=1e-13)
        assert led.terms["kinetic_magnetic_energy_b"] == pytest.approx(E0 * math.exp(-1.0), rel=1e-13)
        assert abs(led.slack) < 1e-6 * E0

    def test_spectral_and_physical_rates_agree(self, forced_traj):
        s = forced_traj.states[5]
        fast = LedgerEvaluator(s.u.grid).rates(s)
        slow = LedgerEvaluator(s.u.grid, spectral_fast_path=False).rates(s)
        for name in ("energy", "dissipation", "forcing_F_grad", "forcing_G_grad"):
            assert slow[name] == pytest.approx(fast[name], rel=1e-10, abs=1e-10)
        for name in ("transport_v", "transport_c", "pressure_u", "q_b", "weight_gradient_term"):
            assert abs(slow[name]) < 1e-10

    def test_global_ledger_on_forced_run(self, forced_traj):
        led = global_energy_ledger(forced_traj)
        assert abs(led.slack) < 1e-6 * led.terms["kinetic_magnetic_energy_a"]

    def test_weighted_ledger_on_forced_run(self, forced_traj):
        led = weighted_energy_ledger(forced_traj, 1.5)
        assert led.slack >= -1e-6 * led.terms["kinetic_magnetic_energy_a"]

    def test_window_must_hit_samples(self, forced_traj):
        with pytest.raises(ValueError):
            global_energy_ledger(forced_traj, window=(0.0, 0.0105))
        with pytest.raises(ValueError):
            global_energy_ledger(forced_traj, window=(0.0, 0.5))

    def test_weight_range(self, forced_traj):
        with pytest.raises(ValueError):
            weighted_energy_ledger(forced_traj, 2.5)

    def test_unknown_rule(self, forced_traj):
        with pytest.raises(ValueError):
            global_energy_ledger(forced_traj, rule="boole")


class TestLocalEnergy:
    def test_time_bump_shape(self):
        t = np.array([0.0, 0.45, 0.6, 0.95, 1.2])
        a, _ = time_bump(t, 0.2, 0.6, 0.2)
        np.testing.assert_allclose(a, [0.0, 1.0, 1.0, 0.0, 0.0], atol=1e-15)

    def test_time_bump_derivative(self):
        t = np.linspace(0.0, 1.0, 20001)
        a, da = time_bump(t, 0.2, 0.6, 0.2)
        fd = np.gradient(a, t)
        assert np.max(np.abs(fd - da)) < 1e-3 * np.max(np.abs(da))

    def test_spec_parsing(self):
        tf = TestFunction.from_spec({"t0": 0.1, "t1": 0.2, "eta": 0.05, "radius": 1.0})
        assert tf.support == pytest.approx((0.125, 0.25))
        with pytest.raises(ValueError):
            TestFunction.from_spec({"t0": 0.1, "t1": 0.2, "eta": 0.05})
        with pytest.raises(ValueError):
            TestFunction.from_spec({"t0": 0.1, "t1": 0.2, "eta": 0.05, "radius": 1.0, "sigma": 2})
        with pytest.raises(ValueError):
            TestFunction(0.2, 0.1, 0.05, 1.0)

    def test_support_must_fit(self, forced_traj):
        with pytest.raises(ValueError):
            local_energy_residual(forced_traj, TestFunction(0.01, 0.015, 0.01, 1.0))
        with pytest.raises(ValueError):
            local_energy_residual(forced_traj, TestFunction(0.002, 0.01, 0.004, 2.0))

    def test_pairing_is_small_for_smooth_run(self, forced_traj):
        r = local_energy_residual(forced_traj, TestFunction(0.002, 0.01, 0.004, 1.2))
        assert abs(r) < 1e-4


class TestGronwall:
    def test_reference_values(self):
        cert = gronwall_bound(1.0, 1.0, 1.0, 1.0)
        assert cert.T1 == pytest.approx(1 / 16)
        assert cert.bound == pytest.approx(2 * math.sqrt(2))

    @given(A=st.floats(0.01, 3.0), B=st.floats(0.01, 3.0), T0=st.floats(0.01, 1.0))
    def test_saturating_solution_respects_bound(self, A, B, T0):
        cert = gronwall_bound(A, B, 1.0, T0)
        sol = solve_ivp(lambda t, a: B * (1 + a**3), (0, cert.T1), [A], rtol=1e-10, atol=1e-12)
        assert sol.y[0, -1] <= cert.bound

    def test_invalid(self):
        with pytest.raises(ValueError):
            gronwall_bound(-1.0, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            gronwall_bound(1.0, 1.0, 0.0, 1.0)

    def test_trivial_B(self):
        assert gronwall_bound(2.0, 0.0, 3.0, 5.0).T1 == 3.0


class TestControlBounds:
    def test_passive_formula(self):
        val = passive_control_bound(1.0, 2.0, 3.0, 1.0, 8.0, 1.0, 1.5, C_gamma=0.5)
        assert val == pytest.approx((5 + 0.5 * 2.0) * math.exp(0.5 * (1 + 4.0)))

    def test_passive_rejects_negative(self):
        with pytest.raises(ValueError):
            passive_control_bound(-1.0, 0, 0, 0, 0, 1.0, 0.0)

    def test_active_condition(self):
        assert active_control_bound(0.1, 0.1, 0.0, 0.1, 1.0) == pytest.approx(1.02)
        with pytest.raises(ConditionNotMetError):
            active_control_bound(1.0, 1.0, 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            active_control_bound(0.1, 0.1, 0.0, 0.1, 1.0, C_gamma=0.5)

    def test_calibrated_constant_is_tight(self):
        C = calibrate_passive_constant(10.0, 2.0, 1.0, 0.5, 1.0)
        bound = (2.0 + C * 1.0) * math.exp(C * (0.5 + 0.5 ** (1 / 3)))
        assert bound == pytest.approx(10.0, rel=1e-10)
        assert calibrate_passive_constant(1.0, 2.0, 1.0, 0.5, 1.0) == 0.0
