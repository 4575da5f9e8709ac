import numpy as np
import pytest

from mhdlab.dss import (
    CurlGenerator,
    DssBox,
    DssField,
    DssGenerator,
    PermutedForcing,
    complex_step_divergence,
    dss_extend,
    dss_forcing,
    dss_initial_data,
    dss_residual,
    dss_weighted_norm_study,
    dyadic_pairs,
    rotate_array,
    rotate_field,
    scaling_covariance_check,
    standard_generator,
)
from mhdlab.evolution import SimConfig, solve_mhdg
from mhdlab.initial import ForcingSpec, InitialSpec
from mhdlab.spectral import Grid, divergence, l2_norm


@pytest.fixture(scope="module")
def gen():
    return standard_generator()


@pytest.fixture(scope="module")
def field(gen):
    return dss_extend(gen, DssBox(32.0, 64))


def _pick(vals, j):
    return vals[..., j[:, None, None], j[None, :, None], j[None, None, :]]


class TestGenerator:
    def test_divergence_free(self, gen):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-2.0, 2.0, (3, 4000))
        div = complex_step_divergence(gen.g, pts)
        scale = np.max(np.abs(gen.g(pts)))
        assert scale > 1.0
        assert np.max(np.abs(div)) < 1e-12 * scale

    def test_complex_step_matches_known_divergence(self):
        def g(y):
            return np.stack([y[0] ** 2, y[1] * y[2], np.sin(y[2])])

        pts = np.random.default_rng(0).standard_normal((3, 50))
        np.testing.assert_allclose(complex_step_divergence(g, pts), 2 * pts[0] + pts[2] + np.cos(pts[2]), rtol=1e-14)

    def test_support_inside_annulus(self, gen):
        y = np.zeros((3, 500))
        y[0] = np.linspace(0.0, 3.0, 500)
        vals = np.linalg.norm(gen.g(y), axis=0)
        lo, hi = gen.support
        assert np.all(vals[(y[0] <= lo) | (y[0] >= hi)] == 0.0)
        assert vals.max() > 0

    def test_support_validation(self):
        with pytest.raises(ValueError):
            DssGenerator(2.0, CurlGenerator(0.9, 1.5), support=(0.9, 1.5))
        with pytest.raises(ValueError):
            DssGenerator(1.0, CurlGenerator(1.1, 1.5))


class TestExtension:
    def test_dyadic_residual_is_exact(self, field):
        assert dss_residual(field) == 0.0

    def test_residual_detects_non_dss(self, field):
        broken = DssField(2.0, field.box, field.values * (1.0 + 0.01 * field.radius()))
        assert dss_residual(broken, relative=True) > 1e-3

    def test_core_is_masked(self, field):
        assert np.all(np.isnan(field.values[:, 32, 32, 32]))

    def test_dyadic_pairs_map_x_to_2x(self):
        box = DssBox(8.0, 16)
        j, j2 = dyadic_pairs(box)
        a = box.axis()
        np.testing.assert_array_equal(a[j2], 2 * a[j])

    def test_rescaled_field_is_same_field(self, field):
        # lam u(lam x) = u(x): the rescaled samples reproduce the field on the smaller box
        small = field.rescaled(2.0)
        j, j2 = dyadic_pairs(field.box)
        np.testing.assert_array_equal(_pick(small.values, j2), 2.0 * _pick(field.values, j2))
        assert dss_residual(small, relative=True) == dss_residual(field, relative=True)

    def test_interpolated_residual_shrinks_with_resolution(self, gen):
        rng = np.random.default_rng(0)
        pts = rng.uniform(-14, 14, (400, 3))
        pts = pts[np.linalg.norm(pts, axis=1) > 8]
        coarse = dss_residual(dss_extend(gen, DssBox(32.0, 64)), pts, relative=True)
        fine = dss_residual(dss_extend(gen, DssBox(32.0, 128)), pts, relative=True)
        assert fine < coarse / 4

    def test_sample_set_validation(self, field):
        with pytest.raises(ValueError):
            dss_residual(field, np.array([[20.0, 0.0, 0.0]]))
        with pytest.raises(ValueError):
            dss_residual(field, np.array([[0.5, 0.0, 0.0]]))
        with pytest.raises(ValueError):
            dss_residual(field, "random")

    def test_forcing_scaling(self, gen):
        box = DssBox(32.0, 64)
        a = dss_forcing(gen, 0.3, box).values
        b = dss_forcing(gen, 1.2, box).values
        j, j2 = dyadic_pairs(box)
        diff = 4.0 * _pick(b, j2) - _pick(a, j)
        assert np.nanmax(np.abs(diff)) == 0.0
        assert np.nanmax(np.abs(a)) > 0

    def test_forcing_requires_tensor_and_time(self, gen):
        with pytest.raises(ValueError):
            dss_forcing(standard_generator(forcing=False), 0.3, DssBox(8.0, 16))
        with pytest.raises(ValueError):
            dss_forcing(gen, 0.0, DssBox(8.0, 16))


class TestWeightedNorms:
    def test_shell_ratios(self, field):
        rep = dss_weighted_norm_study(field, [0.0, 0.5, 1.5], [4, 8, 16, 32])
        for gamma, row in rep["gammas"].items():
            assert row["expected_ratio"] == pytest.approx(2.0 ** (1 - gamma))
            assert row["ratios"][-1] == pytest.approx(row["expected_ratio"], rel=0.1)
        assert rep["gammas"][1.5]["converges"]
        assert not rep["gammas"][0.5]["converges"]

    def test_norms_grow(self, field):
        rep = dss_weighted_norm_study(field, [0.5], [4, 8, 16, 32])
        assert np.all(np.diff(rep["gammas"][0.5]["norms"]) > 0)

    def test_radius_validation(self, field):
        with pytest.raises(ValueError):
            dss_weighted_norm_study(field, [0.5], [8, 4])
        with pytest.raises(ValueError):
            dss_weighted_norm_study(field, [0.5], [8, 64])


class TestPeriodicData:
    def test_initial_data_is_cut_off(self, gen):
        g = Grid(32)
        vals = dss_initial_data(gen, g)
        r = g.distance_to(g.center)
        assert np.all(vals[:, r >= g.box_length / 2] == 0.0)
        assert np.abs(vals).max() > 0

    def test_projected_initial_data_is_solenoidal(self):
        from mhdlab.initial import initial_fields
        from mhdlab.spectral import max_divergence

        u, b = initial_fields(InitialSpec("dss", amplitude=1.0), Grid(32))
        assert max_divergence(u) < 1e-12 and max_divergence(b) < 1e-12

    def test_solver_accepts_dss_kind(self):
        cfg = SimConfig(Grid(16), epsilon=1.0, dt=1e-3, t_end=0.003, initial=InitialSpec("dss", amplitude=1.0))
        traj = solve_mhdg(cfg)
        assert l2_norm(traj.states[0].u) > 0


class TestRotation:
    def test_rotate_array_scalar_and_vector(self):
        a = np.random.default_rng(0).standard_normal((3, 4, 4, 4))
        r = rotate_array(a)
        three = rotate_array(rotate_array(r))
        np.testing.assert_array_equal(three, a)

    def test_rotation_preserves_divergence_free(self, grid16):
        from tests.helpers import random_vectors

        (u,) = random_vectors(grid16, 9)
        ru = rotate_field(u)
        assert l2_norm(divergence(ru)) < 1e-13 * l2_norm(u)
        assert l2_norm(ru) == pytest.approx(l2_norm(u))

    def test_solver_commutes_with_rotation(self):
        cfg = SimConfig(
            Grid(16), epsilon=1.0, dt=1e-3, t_end=0.005,
            initial=InitialSpec("orszag_tang", amplitude=2.0),
            forcing=ForcingSpec("mode", amplitude=1.0, mode=(1, 1, 0), omega=3.0),
        )
        g = cfg.grid
        from mhdlab.initial import initial_fields

        u0, b0 = initial_fields(cfg.initial, g)
        f = cfg.forcing.build(g)
        base = solve_mhdg(cfg, initial=(u0, b0), forcing=f).states[-1]
        rot = solve_mhdg(cfg, initial=(rotate_field(u0), rotate_field(b0)), forcing=PermutedForcing(f)).states[-1]
        assert l2_norm(rotate_field(base.u) - rot.u) < 1e-12 * l2_norm(base.u)
        assert l2_norm(rotate_field(base.b) - rot.b) < 1e-12 * l2_norm(base.b)


class TestScalingCovariance:
    @pytest.mark.parametrize("variant", ["fixed", "time_scaled"])
    def test_two_box_check(self, variant):
        cfg = SimConfig(
            Grid(16), epsilon=1.0, dt=1e-3, t_end=0.004, mollifier_variant=variant,
            initial=InitialSpec("orszag_tang", amplitude=2.0),
            forcing=ForcingSpec("mode", amplitude=1.0, mode=(1, 1, 0), omega=3.0),
        )
        rep = scaling_covariance_check(cfg, 2.0)
        assert rep["max_relative_difference"] <= 1e-12
        assert len(rep["times"]) == 5

    def test_lambda_must_exceed_one(self):
        cfg = SimConfig(Grid(16), epsilon=1.0, dt=1e-3, t_end=0.002)
        with pytest.raises(ValueError):
            scaling_covariance_check(cfg, 1.0)
