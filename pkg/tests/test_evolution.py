import math

import numpy as np
import pytest

from mhdlab.evolution import (
    BlowUpError,
    Dynamics,
    DriftSeries,
    PicardConfig,
    SimConfig,
    SimState,
    Trajectory,
    duhamel_linear_part,
    epsilon_convergence_study,
    existence_time,
    forcing_l2_norm,
    picard_iterate,
    picard_solve,
    solve_ad,
    solve_mhdg,
    step,
    trajectory_distance,
)
from mhdlab.initial import InitialSpec, ModeForcing, ZeroForcing
from mhdlab.mollifier import UnderResolvedKernelError
from mhdlab.spectral import Grid, ScalarField, TensorField, VectorField, l2_norm, max_divergence

from .helpers import random_vectors


def _norm(s):
    return math.sqrt(l2_norm(s.u) ** 2 + l2_norm(s.b) ** 2)


def _diff(s1, s2):
    return math.sqrt(l2_norm(s1.u - s2.u) ** 2 + l2_norm(s1.b - s2.b) ** 2)


def shear(g, amp=1.0):
    y = g.coordinates[1]
    zero = np.zeros(g.shape)
    return VectorField(g, physical=np.stack([amp * np.sin(y) + zero, zero, zero]))


def ot_config(**kw):
    base = dict(grid=Grid(16), epsilon=0.8, dt=1e-3, t_end=0.02, initial=InitialSpec("orszag_tang", amplitude=3.0))
    base.update(kw)
    return SimConfig(**base)


class TestSimConfig:
    def test_rejects_bad_values(self):
        g = Grid(16)
        with pytest.raises(ValueError):
            SimConfig(g, epsilon=1.0, dt=0.0, t_end=1.0)
        with pytest.raises(ValueError):
            SimConfig(g, epsilon=1.0, dt=0.1, t_end=0.01)
        with pytest.raises(UnderResolvedKernelError):
            SimConfig(g, epsilon=0.5 * g.h, dt=0.1, t_end=1.0)
        with pytest.raises(ValueError):
            SimConfig(g, epsilon=1.0, dt=0.1, t_end=1.0, mollifier_variant="adaptive")
        with pytest.raises(ValueError):
            SimConfig(g, epsilon=1.0, dt=0.1, t_end=1.0, driver="euler")
        with pytest.raises(ValueError):
            PicardConfig(start="random")

    def test_time_scaled_allows_small_epsilon(self):
        g = Grid(16)
        SimConfig(g, epsilon=0.5 * g.h, dt=0.1, t_end=1.0, mollifier_variant="time_scaled")

    def test_step_times_end_exactly(self):
        cfg = SimConfig(Grid(16), epsilon=1.0, dt=0.03, t_end=0.1)
        times = cfg.step_times()
        assert cfg.n_steps == 4
        assert times[-1] == 0.1


class TestTrajectory:
    def test_times_must_increase(self, grid16):
        z = VectorField.zeros(grid16)
        s = ScalarField.zeros(grid16)
        traj = Trajectory(grid16)
        traj.append(SimState(0.1, z, z, s, s))
        with pytest.raises(ValueError):
            traj.append(SimState(0.1, z, z, s, s))

    def test_distance_requires_shared_times(self):
        a = solve_mhdg(ot_config(t_end=0.004))
        b = solve_mhdg(ot_config(t_end=0.005))
        with pytest.raises(ValueError):
            trajectory_distance(a, b)
        assert trajectory_distance(a, a) == 0.0


class TestStepper:
    def test_zero_stays_zero(self):
        traj = solve_mhdg(ot_config(initial=InitialSpec("zero")))
        assert all(_norm(s) == 0.0 for s in traj.states)

    def test_shear_decays_like_heat(self):
        # sin(y) e_x is a steady nonlinear balance, so it decays exactly as exp(-t)
        cfg = ot_config(t_end=0.1, dt=0.01)
        g = cfg.grid
        traj = solve_mhdg(cfg, initial=(shear(g, 2.0), VectorField.zeros(g)))
        for s in traj.states:
            expected = shear(g, 2.0 * math.exp(-s.t))
            assert l2_norm(s.u - expected) < 1e-12 * l2_norm(expected)

    def test_fourth_order_self_convergence(self):
        def final(m):
            return solve_mhdg(ot_config(dt=0.08 / m, t_end=0.08)).states[-1]

        ref = final(64)
        e1, e2, e3 = (_diff(final(m), ref) for m in (4, 8, 16))
        assert 14.0 < e1 / e2 < 18.0
        assert 14.0 < e2 / e3 < 18.0

    def test_solution_stays_solenoidal(self):
        s = solve_mhdg(ot_config()).states[-1]
        assert max_divergence(s.u) < 1e-12 and max_divergence(s.b) < 1e-12

    def test_single_step_matches_solver(self):
        cfg = ot_config(t_end=0.001)
        traj = solve_mhdg(cfg)
        s1 = step(traj.states[0], cfg.dt, cfg)
        assert _diff(s1, traj.states[-1]) == 0.0

    def test_blow_up_is_reported(self, grid16):
        u = VectorField(grid16, physical=np.full((3,) + grid16.shape, np.nan))
        with pytest.raises(BlowUpError):
            solve_mhdg(ot_config(), initial=(u, VectorField.zeros(grid16)))

    def test_snapshot_cadence(self):
        traj = solve_mhdg(ot_config(snapshot_every=7))
        np.testing.assert_allclose(traj.times, [0.0, 0.007, 0.014, 0.02])
        assert len(traj.samples[0.0]) == 21


class TestPicard:
    def test_agrees_with_stepper(self):
        cfg = ot_config()
        a = solve_mhdg(cfg).states[-1]
        b = picard_solve(cfg).states[-1]
        assert _diff(a, b) < 1e-6 * _norm(a)

    def test_contraction_and_uniqueness(self):
        cfg = ot_config(t_end=0.01)
        g = cfg.grid
        dyn = Dynamics(cfg, ZeroForcing())
        u0, b0 = random_vectors(g, 11, count=2, kmax=3)
        U0 = np.concatenate([u0.spectral, b0.spectral])
        runs = [
            picard_iterate(dyn, U0, 0.0, 0.01, 1e-3, tol=1e-11, max_iters=60, start=start, seed=3)
            for start in ("zero", "perturbed")
        ]
        for r in runs:
            assert r.contraction_factor(floor=1e-12) < 1.0
            assert r.history[-1] <= 1e-11
        gap = np.max(np.abs(runs[0].U - runs[1].U))
        assert gap * math.sqrt(g.volume) < 1e-9

    def test_non_convergence_raises(self):
        from mhdlab.evolution import PicardDivergenceError

        cfg = ot_config()
        dyn = Dynamics(cfg, ZeroForcing())
        u0, b0 = random_vectors(cfg.grid, 2, count=2)
        U0 = np.concatenate([u0.spectral, b0.spectral])
        with pytest.raises(PicardDivergenceError) as info:
            picard_iterate(dyn, U0, 0.0, 0.01, 1e-3, tol=1e-30, max_iters=3)
        assert len(info.value.history) == 3

    def test_horizon_warning(self):
        cfg = ot_config(existence_constant=1e-6, t_end=0.002)
        with pytest.warns(RuntimeWarning):
            picard_solve(cfg)


class TestExistenceTime:
    def test_formula(self, grid16):
        u, b = random_vectors(grid16, 4, count=2)
        norm = math.sqrt(l2_norm(u) ** 2 + l2_norm(b) ** 2)
        T0 = existence_time(u, b, None, 0.5, 3.0, T1=10.0)
        assert T0 == pytest.approx(3.0 * 0.125 / norm**2)
        assert existence_time(u, b, 1.0, 0.5, 3.0, T1=10.0) == pytest.approx(3.0 * 0.125 / (norm + 1) ** 2)

    def test_capped_and_zero_data(self, grid16):
        z = VectorField.zeros(grid16)
        assert existence_time(z, z, None, 0.5, 3.0, T1=0.7) == 0.7
        with pytest.raises(ValueError):
            existence_time(z, z, None, 0.5, 0.0)

    def test_forcing_norm_of_steady_mode(self, grid16):
        f = ModeForcing(amplitude=2.0, mode=(1, 0, 0), omega=0.0, magnetic_ratio=0.0, box_length=grid16.box_length)
        f_hat, _ = f.tensors(0.0, grid16)
        per_time = l2_norm(TensorField(grid16, spectral=f_hat))
        assert forcing_l2_norm(f, grid16, 0.25) == pytest.approx(per_time * 0.5, rel=1e-12)


class TestDuhamel:
    def test_free_part_is_heat_flow(self, grid16):
        u = shear(grid16)
        out, _ = duhamel_linear_part(u, VectorField.zeros(grid16), None, None, 0.3)
        assert l2_norm(out - shear(grid16, math.exp(-0.3))) < 1e-13

    def test_constant_forcing_exact_vs_quadrature(self, grid16):
        f = ModeForcing(amplitude=1.0, mode=(0, 1, 1), omega=0.0, magnetic_ratio=0.5, box_length=grid16.box_length)
        F_hat, G_hat = f.tensors(0.0, grid16)
        F, G = TensorField(grid16, spectral=F_hat), TensorField(grid16, spectral=G_hat)
        z = VectorField.zeros(grid16)
        exact = duhamel_linear_part(z, z, F, G, 0.4)
        quad = duhamel_linear_part(z, z, lambda s: F, lambda s: G, 0.4, nodes=16)
        assert l2_norm(exact[0]) > 0
        for a, b in zip(exact, quad):
            assert l2_norm(a - b) < 1e-13 * l2_norm(exact[0])

    def test_negative_time(self, grid16):
        z = VectorField.zeros(grid16)
        with pytest.raises(ValueError):
            duhamel_linear_part(z, z, None, None, -1.0)


class TestAdvectionDiffusion:
    def test_self_drift_reproduces_solution(self):
        cfg = ot_config(t_end=0.01)
        traj = solve_mhdg(cfg)
        lin = solve_ad(cfg, DriftSeries.from_trajectory(traj))
        for a, b in zip(traj.states, lin.states):
            assert _diff(a, b) < 1e-6 * _norm(a)

    def test_drift_checks(self):
        cfg = ot_config(t_end=0.004)
        traj = solve_mhdg(cfg)
        series = DriftSeries.from_trajectory(traj)
        with pytest.raises(ValueError):
            solve_ad(ot_config(t_end=0.005), series)
        bad = DriftSeries(series.grid, series.times, series.values.copy())
        x = cfg.grid.coordinates[0]
        bad.values[:, 0] = VectorField(
            cfg.grid, physical=np.stack([np.sin(x) + np.zeros(cfg.grid.shape)] * 3)
        ).spectral[0]
        with pytest.raises(ValueError):
            solve_ad(cfg, bad)

    def test_swapped_series(self):
        traj = solve_mhdg(ot_config(t_end=0.002))
        s = DriftSeries.from_trajectory(traj)
        np.testing.assert_array_equal(s.swapped().values[:, 0:3], s.values[:, 3:6])
        with pytest.raises(ValueError):
            s.lookup(0.0015)


class TestEpsilonStudy:
    def test_requires_decreasing_scales(self):
        with pytest.raises(ValueError):
            epsilon_convergence_study(ot_config(), [0.8, 1.2])

    def test_small_study(self):
        res = epsilon_convergence_study(ot_config(t_end=0.01, dt=2e-3), [2.0, 1.0, 0.5])
        assert len(res["distances"]) == 2
        assert all(d > 0 for d in res["distances"])


class TestCalibration:
    def test_default_matches_calibration_file(self):
        import json
        from pathlib import Path

        from mhdlab.evolution import DEFAULT_EXISTENCE_CONSTANT

        data = json.loads((Path(__file__).resolve().parent.parent / "configs" / "calibration.json").read_text())
        assert DEFAULT_EXISTENCE_CONSTANT == data["c_rounded"]
        assert DEFAULT_EXISTENCE_CONSTANT <= data["c"]

    def test_default_horizon_contracts(self):
        # the battery's tightest case at the shipped constant
        from mhdlab.evolution import DEFAULT_EXISTENCE_CONSTANT, existence_time, measured_contraction
        from mhdlab.initial import initial_fields

        g = Grid(16)
        spec = InitialSpec("random", amplitude=400.0, kmax=3)
        cfg = SimConfig(g, epsilon=0.2 * g.box_length, dt=1.0, t_end=1.0, initial=spec, seed=1)
        u0, b0 = initial_fields(spec, g, 1)
        T0 = existence_time(u0, b0, None, cfg.epsilon, DEFAULT_EXISTENCE_CONSTANT)
        assert measured_contraction(cfg, T0, initial=(u0, b0)) < 0.9
