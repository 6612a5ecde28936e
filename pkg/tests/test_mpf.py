import numpy as np
import pytest
from scipy.stats import multivariate_normal

from bathy import height_at
from exceptions import ConfigError
from filters import FilterSettings
from filters.mpf import (
    MpfGeneralModel,
    MpfLocalizer,
    MpfModel,
    MpfParticleSet,
    mpf_get_estimate,
    mpf_init,
    mpf_measurement_update,
    mpf_predict,
    mpf_predict_general,
    mpf_resample,
)
from filters.particle import ParticleFilterConfig
from models import ControlInput, LinearMotion, Measurement, NoiseConfig, State
from sim import run_filter, simulate_truth
from utils.seeding import filter_rng

R_VAR = 0.3048 ** 2


def coincident(n, xy, m, p):
    return MpfParticleSet(
        nonlinear=np.tile(xy, (n, 1)).astype(float),
        linear_means=np.full(n, float(m)),
        linear_vars=np.full(n, float(p)),
        weights=np.full(n, 1.0 / n),
        prior_linear_mean=float(m),
        prior_linear_var=float(p),
    )


def scalar_update(m, p, z, L, r=R_VAR):
    """两路量测 depth = pz、altitude = L − pz 下的一维 KF 更新（信息形式）"""
    p_new = 1.0 / (1.0 / p + 2.0 / r)
    m_new = p_new * (m / p + (z[0] + L - z[1]) / r)
    return m_new, p_new


class TestMpfInit:
    def test_linear_stats_from_prior(self, flat_grid, default_noise):
        ps = mpf_init(flat_grid, 50, State(30.0, 30.0, 4.0), default_noise.P0, np.random.default_rng(0))
        assert ps.nonlinear.shape == (50, 2)
        np.testing.assert_array_equal(ps.linear_means, 4.0)
        np.testing.assert_allclose(ps.linear_vars, R_VAR)
        np.testing.assert_allclose(ps.weights, 1 / 50)
        assert ps.prior_linear_mean == 4.0

    def test_rejects_empty(self, flat_grid, default_noise):
        with pytest.raises(ValueError):
            mpf_init(flat_grid, 0, State(30.0, 30.0, 4.0), default_noise.P0, np.random.default_rng(0))


class TestMpfMeasurementUpdate:
    def model(self, grid, noise):
        return MpfModel.build(grid, LinearMotion(), ControlInput(0.0, 0.0, 0.0), noise)

    def test_zero_innovation(self, flat_grid, default_noise):
        ps = coincident(10, [30.0, 30.0], 4.0, 0.2)
        out = mpf_measurement_update(ps, Measurement(4.0, 6.0), flat_grid, self.model(flat_grid, default_noise))
        np.testing.assert_allclose(out.linear_means, 4.0)
        np.testing.assert_allclose(out.linear_vars, 0.2 * R_VAR / (R_VAR + 0.4))
        assert (out.linear_vars < 0.2).all()
        np.testing.assert_allclose(out.weights, 0.1)

    def test_matches_scalar_kalman(self, flat_grid, default_noise):
        ps = coincident(4, [30.0, 30.0], 4.0, 0.2)
        z = Measurement(4.3, 5.5)
        out = mpf_measurement_update(ps, z, flat_grid, self.model(flat_grid, default_noise))
        m, p = scalar_update(4.0, 0.2, z.as_array(), 10.0)
        np.testing.assert_allclose(out.linear_means, m, rtol=0, atol=1e-10)
        np.testing.assert_allclose(out.linear_vars, p, rtol=0, atol=1e-10)

    def test_weights_follow_marginal_likelihood(self, plane_grid, default_noise):
        ps = MpfParticleSet(
            nonlinear=np.array([[50.0, 50.0], [80.0, 60.0], [120.0, 40.0]]),
            linear_means=np.array([3.0, 3.5, 2.5]),
            linear_vars=np.array([0.1, 0.2, 0.05]),
            weights=np.full(3, 1 / 3),
        )
        z = Measurement(3.2, 18.0)
        out = mpf_measurement_update(ps, z, plane_grid, self.model(plane_grid, default_noise))
        C = np.array([1.0, -1.0])
        expected = []
        for (x, y), m, p in zip(ps.nonlinear, ps.linear_means, ps.linear_vars):
            mean = np.array([0.0, height_at(plane_grid, x, y)]) + C * m
            expected.append(multivariate_normal.pdf(z.as_array(), mean, p * np.outer(C, C) + default_noise.R))
        expected = np.array(expected)
        np.testing.assert_allclose(out.weights, expected / expected.sum(), rtol=1e-9)

    def test_outside_particle_gets_zero_weight(self, flat_grid, default_noise):
        ps = coincident(2, [30.0, 30.0], 4.0, 0.2)
        ps.nonlinear[1] = [-5.0, 30.0]
        out = mpf_measurement_update(ps, Measurement(4.0, 6.0), flat_grid, self.model(flat_grid, default_noise))
        assert out.weights[1] == 0.0
        assert out.weights[0] == pytest.approx(1.0)
        assert out.linear_vars[1] == pytest.approx(0.2)
        assert out.outside.tolist() == [False, True]


class TestMpfResampleAndPredict:
    def test_resample_copies_triples_and_injects_prior(self, flat_grid):
        ps = coincident(100, [30.0, 30.0], 4.0, 0.2)
        ps.nonlinear[7] = [11.0, 12.0]
        ps.linear_means[7] = 2.5
        ps.linear_vars[7] = 0.01
        ps.weights = np.zeros(100)
        ps.weights[7] = 1.0
        out = mpf_resample(ps, flat_grid, np.random.default_rng(1), 0.05)
        np.testing.assert_array_equal(out.nonlinear[:95], np.tile([11.0, 12.0], (95, 1)))
        np.testing.assert_array_equal(out.linear_means[:95], 2.5)
        np.testing.assert_array_equal(out.linear_vars[:95], 0.01)
        np.testing.assert_array_equal(out.linear_means[95:], 4.0)
        np.testing.assert_array_equal(out.linear_vars[95:], 0.2)
        np.testing.assert_allclose(out.weights, 0.01)

    def test_predict_single_integrator(self, flat_grid):
        noise = NoiseConfig(Q=np.diag([0.01, 0.01, 0.0]), R=np.eye(2) * R_VAR, P0=np.eye(3))
        model = MpfModel.build(flat_grid, LinearMotion(), ControlInput(1.0, -3.0, -0.1524), noise)
        ps = coincident(5, [30.0, 30.0], 5.0, 0.3)
        out = mpf_predict(ps, model, flat_grid, np.random.default_rng(2), 1.0)
        np.testing.assert_allclose(out.linear_means, 4.8476)
        np.testing.assert_allclose(out.linear_vars, 0.3)
        np.testing.assert_allclose(out.nonlinear.mean(axis=0), [31.0, 27.0], atol=0.3)

    def test_rejects_cross_terms(self, flat_grid):
        Q = np.diag([0.01, 0.01, 0.01])
        Q[0, 2] = Q[2, 0] = 0.001
        noise = NoiseConfig(Q=Q, R=np.eye(2), P0=np.eye(3))
        with pytest.raises(ConfigError):
            MpfModel.build(flat_grid, LinearMotion(), ControlInput(0.0, 0.0, 0.0), noise)
        with pytest.raises(ConfigError):
            MpfLocalizer(flat_grid, LinearMotion(), noise, 1.0, State(30.0, 30.0, 4.0), ParticleFilterConfig(10),
                         np.random.default_rng(0))

    def test_estimate(self):
        ps = MpfParticleSet(
            nonlinear=np.array([[0.0, 0.0], [2.0, 2.0]]),
            linear_means=np.array([2.0, 4.0]),
            linear_vars=np.array([0.1, 0.1]),
            weights=np.array([0.5, 0.5]),
        )
        assert mpf_get_estimate(ps).as_array() == pytest.approx([1.0, 1.0, 3.0])


def test_general_recursion_matches_reduced(plane_grid, default_noise):
    control = ControlInput(1.0, 0.5, 0.05)
    motion = LinearMotion()
    model = MpfModel.build(plane_grid, motion, control, default_noise)
    general = MpfGeneralModel.from_reduced(model, 1.0)
    truth = simulate_truth(plane_grid, motion, control, 20, default_noise, 1.0, 11, State(50.0, 50.0, 3.0))

    def run(predict):
        rng = np.random.default_rng(21)
        ps = mpf_init(plane_grid, 80, truth.states[0], default_noise.P0, rng)
        history = []
        for t, z in enumerate(truth.measurements):
            if t > 0:
                ps = predict(ps, rng)
            ps = mpf_measurement_update(ps, z, plane_grid, model)
            history.append(mpf_get_estimate(ps).as_array())
            ps = mpf_resample(ps, plane_grid, rng, 0.05)
        return np.array(history), ps

    reduced, ps_r = run(lambda ps, rng: mpf_predict(ps, model, plane_grid, rng, 1.0))
    full, ps_g = run(lambda ps, rng: mpf_predict_general(ps, general, rng, 1.0))
    np.testing.assert_allclose(full, reduced, rtol=0, atol=1e-10)
    np.testing.assert_allclose(ps_g.linear_vars, ps_r.linear_vars, rtol=0, atol=1e-10)


def test_coincident_particles_reduce_to_depth_kalman(plane_grid):
    q, p0 = 0.004, 0.09
    noise = NoiseConfig(Q=np.diag([0.0, 0.0, q]), R=np.eye(2) * R_VAR, P0=np.diag([0.0, 0.0, p0]))
    control = ControlInput(0.8, 0.4, 0.1)
    mpf = MpfLocalizer(plane_grid, LinearMotion(), noise, 1.0, State(40.0, 40.0, 2.0),
                       ParticleFilterConfig(n_particles=20, inject_fraction=0.0, estimate_after_resample=False),
                       np.random.default_rng(3))
    rng = np.random.default_rng(4)
    m, p = 2.0, p0
    x, y = 40.0, 40.0
    for t in range(30):
        if t > 0:
            x, y = x + 0.8, y + 0.4
            m, p = m + 0.1, p + q
        L = height_at(plane_grid, x, y)
        depth = 2.0 + 0.1 * t
        z = np.array([depth, L - depth]) + rng.normal(0.0, 0.3048, 2)
        est = mpf.first(Measurement.from_array(z)) if t == 0 else mpf.step(control, Measurement.from_array(z))
        m, p = scalar_update(m, p, z, L)
        assert est.px == pytest.approx(x, abs=1e-9)
        assert est.pz == pytest.approx(m, abs=1e-6)
        np.testing.assert_allclose(mpf.particles.linear_vars, p, rtol=0, atol=1e-7)


@pytest.mark.slow
def test_marginalization_reduces_depth_variance(flat_grid):
    noise = NoiseConfig.from_velocity(0.2, 0.2, 0.05)
    control = ControlInput(0.2, 0.2, 0.05)
    settings = FilterSettings(n_pf=300, n_mpf=300)
    truth = simulate_truth(flat_grid, LinearMotion(), control, 50, noise, 1.0, 5, State(20.0, 20.0, 3.0))
    spread = {}
    for name in ("PF", "MPF"):
        depths = []
        for seed in range(50):
            report = run_filter(name, truth, flat_grid, LinearMotion(), noise, settings, filter_rng(seed, name))
            depths.append([s.pz for s in report.estimates])
        spread[name] = np.var(np.array(depths), axis=0, ddof=1).mean()
    assert spread["MPF"] <= spread["PF"]
