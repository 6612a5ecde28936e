import numpy as np
import pytest

from bathy import height_at, heights_at
from conftest import interior_states
from exceptions import ConfigError
from models import (
    ControlInput,
    LinearMotion,
    MixedMotion,
    MixedMotionParams,
    NoiseConfig,
    State,
    make_motion,
    measure,
    measure_many,
    measurement_jacobian,
    motion_jacobian_mixed,
    step_linear,
    step_mixed,
)

BDE_MIXED = MixedMotionParams(a=0.6, a_d=0.2, a_off=3.0, b=2.0, b_d=10.0, b_off=23.0, vz=-0.1524)


class TestMotion:
    def test_linear_step(self):
        s = step_linear(State(0.0, 0.0, 0.0), ControlInput(1.0, -3.0, -0.1524), 1.0)
        assert s.as_array() == pytest.approx([1.0, -3.0, -0.1524])

    def test_dt_must_be_positive(self, flat_grid):
        with pytest.raises(ValueError):
            step_linear(State(0.0, 0.0, 0.0), ControlInput(1.0, 0.0, 0.0), 0.0)
        with pytest.raises(ValueError):
            step_mixed(State(30.0, 30.0, 1.0), BDE_MIXED, flat_grid, -1.0)

    def test_mixed_step_increments(self, flat_grid):
        s = step_mixed(State(30.0, 30.0, 1.0), BDE_MIXED, flat_grid, 1.0)
        # L = 10：0.6·(10/0.2 + 3) 与 2·(10/10 + 23)
        assert s.px - 30.0 == pytest.approx(31.8)
        assert s.py - 30.0 == pytest.approx(48.0)
        assert s.pz == pytest.approx(1.0 - 0.1524)

    def test_zero_divisor_rejected(self):
        with pytest.raises(ConfigError):
            MixedMotionParams(a=-0.05, a_d=-0.1, a_off=1.0, b=1.0, b_d=0.0, b_off=0.0, vz=-0.3048)

    def test_state_rejects_nan(self):
        with pytest.raises(ValueError):
            State(float("nan"), 0.0, 0.0)

    def test_mixed_jacobian_flat_is_identity(self, flat_grid):
        F = motion_jacobian_mixed(State(30.0, 30.0, 1.0), BDE_MIXED, flat_grid, 1.0)
        np.testing.assert_allclose(F, np.eye(3))

    def test_mixed_jacobian_matches_finite_differences(self, plane_grid):
        params = MixedMotionParams(a=0.6, a_d=20.0, a_off=0.1, b=-0.4, b_d=15.0, b_off=0.2, vz=-0.1)
        rng = np.random.default_rng(4)
        for _ in range(50):
            s = State(rng.uniform(20, 180), rng.uniform(20, 180), rng.uniform(0, 5))
            F = motion_jacobian_mixed(s, params, plane_grid, 0.5)
            eps = 1e-3
            fd = np.empty((3, 3))
            for j in range(3):
                d = np.zeros(3)
                d[j] = eps
                fwd = step_mixed(State.from_array(s.as_array() + d), params, plane_grid, 0.5).as_array()
                back = step_mixed(State.from_array(s.as_array() - d), params, plane_grid, 0.5).as_array()
                fd[:, j] = (fwd - back) / (2 * eps)
            np.testing.assert_allclose(F, fd, rtol=1e-5, atol=1e-9)

    def test_motion_handles(self, flat_grid):
        assert isinstance(make_motion("linear"), LinearMotion)
        assert isinstance(make_motion("mixed", flat_grid), MixedMotion)
        with pytest.raises(ConfigError):
            make_motion("mixed")

    def test_propagate_many_matches_scalar(self, bowl_grid):
        motion = MixedMotion(bowl_grid)
        params = MixedMotionParams(a=0.1, a_d=5.0, a_off=0.2, b=-0.1, b_d=4.0, b_off=0.1, vz=0.05)
        X = np.array([[60.0, 70.0, 1.0], [90.0, 80.0, 2.0], [-10.0, 50.0, 1.0]])
        moved, inside = motion.propagate_many(X, params, 0.5)
        assert inside.tolist() == [True, True, False]
        for i in range(2):
            np.testing.assert_allclose(moved[i], motion.propagate(X[i], params, 0.5))
        # 越界样本水平位置保持不变
        np.testing.assert_allclose(moved[2, :2], X[2, :2])

    def test_linear_propagate_many(self):
        X = np.zeros((4, 3))
        moved, inside = LinearMotion().propagate_many(X, ControlInput(1.0, 2.0, 3.0), 0.5)
        np.testing.assert_allclose(moved, np.tile([0.5, 1.0, 1.5], (4, 1)))
        assert inside.all()


class TestMeasurement:
    def test_measure(self, flat_grid):
        z = measure(flat_grid, State(30.0, 30.0, 4.0))
        assert (z.depth, z.altitude) == pytest.approx((4.0, 6.0))

    def test_depth_plus_altitude_is_height(self, bowl_grid):
        rng = np.random.default_rng(9)
        xmin, xmax, ymin, ymax = bowl_grid.interpolable_bounds()
        X = np.column_stack([rng.uniform(xmin, xmax, 100_000), rng.uniform(ymin, ymax, 100_000),
                             rng.uniform(0.0, 20.0, 100_000)])
        Z, inside = measure_many(bowl_grid, X)
        L, _ = heights_at(bowl_grid, X[:, 0], X[:, 1])
        assert inside.all()
        np.testing.assert_allclose(Z[:, 0] + Z[:, 1], L, rtol=0, atol=1e-12)

    def test_scalar_identity(self, bowl_grid):
        s = State(75.0, 82.0, 3.0)
        z = measure(bowl_grid, s)
        assert z.depth + z.altitude == pytest.approx(height_at(bowl_grid, 75.0, 82.0), abs=1e-12)

    def test_jacobian_flat(self, flat_grid):
        H = measurement_jacobian(flat_grid, State(30.0, 30.0, 1.0))
        np.testing.assert_array_equal(H, [[0, 0, 1], [0, 0, -1]])

    def test_jacobian_printed_signs(self, flat_grid):
        H = measurement_jacobian(flat_grid, State(30.0, 30.0, 1.0), flip_depth_sign=True)
        np.testing.assert_array_equal(H, [[0, 0, -1], [0, 0, 1]])

    def test_jacobian_matches_finite_differences(self, plane_grid):
        rng = np.random.default_rng(5)
        for _ in range(50):
            s = State(rng.uniform(20, 180), rng.uniform(20, 180), rng.uniform(0, 10))
            H = measurement_jacobian(plane_grid, s)
            eps = 1e-3
            fd = np.empty((2, 3))
            for j in range(3):
                d = np.zeros(3)
                d[j] = eps
                fwd = measure(plane_grid, State.from_array(s.as_array() + d)).as_array()
                back = measure(plane_grid, State.from_array(s.as_array() - d)).as_array()
                fd[:, j] = (fwd - back) / (2 * eps)
            np.testing.assert_allclose(H, fd, rtol=1e-5, atol=1e-9)


def _fd_columns(fn, s: State, eps: float, rows: int) -> np.ndarray:
    fd = np.empty((rows, 3))
    for j in range(3):
        d = np.zeros(3)
        d[j] = eps
        fd[:, j] = (fn(State.from_array(s.as_array() + d)) - fn(State.from_array(s.as_array() - d))) / (2 * eps)
    return fd


@pytest.mark.parametrize("lake", ["bowl_grid", "twin_basin_grid"])
class TestJacobiansOnSmoothLakes:
    def test_measurement_jacobian(self, lake, request):
        grid = request.getfixturevalue(lake)
        eps = 1e-4 * grid.cell_size
        for x, y, z in interior_states(grid, 1000, seed=5):
            s = State(x, y, z)
            fd = _fd_columns(lambda t: measure(grid, t).as_array(), s, eps, 2)
            np.testing.assert_allclose(measurement_jacobian(grid, s), fd, rtol=1e-5, atol=1e-9)

    def test_mixed_motion_jacobian(self, lake, request):
        grid = request.getfixturevalue(lake)
        params = MixedMotionParams(a=0.6, a_d=20.0, a_off=0.1, b=-0.4, b_d=15.0, b_off=0.2, vz=-0.1)
        eps = 1e-4 * grid.cell_size
        for x, y, z in interior_states(grid, 1000, seed=6):
            s = State(x, y, z)
            fd = _fd_columns(lambda t: step_mixed(t, params, grid, 0.5).as_array(), s, eps, 3)
            np.testing.assert_allclose(motion_jacobian_mixed(s, params, grid, 0.5), fd, rtol=1e-5, atol=1e-9)


class TestNoiseConfig:
    def test_table_defaults(self):
        noise = NoiseConfig.from_velocity(1.0, -3.0, -0.1524)
        np.testing.assert_allclose(np.diag(noise.Q), [0.01, 0.09, 0.01 * (0.3048 * 0.1524) ** 2])
        np.testing.assert_allclose(noise.R, np.diag([0.3048 ** 2] * 2))
        np.testing.assert_allclose(noise.P0, np.diag([1.0, 1.0, 0.3048 ** 2]))

    def test_rejects_asymmetric(self):
        Q = np.eye(3)
        Q[0, 1] = 0.5
        with pytest.raises(ConfigError):
            NoiseConfig(Q=Q, R=np.eye(2), P0=np.eye(3))

    def test_rejects_singular_R(self):
        with pytest.raises(ConfigError):
            NoiseConfig(Q=np.eye(3), R=np.diag([1.0, 0.0]), P0=np.eye(3))

    def test_rejects_wrong_shape(self):
        with pytest.raises(ConfigError):
            NoiseConfig(Q=np.eye(2), R=np.eye(2), P0=np.eye(3))

    def test_allows_zero_Q(self):
        assert not NoiseConfig(Q=np.zeros((3, 3)), R=np.eye(2), P0=np.eye(3)).Q.any()
