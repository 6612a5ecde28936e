"""EKF 与 UKF

两者共享 GaussianBelief（均值 + 3×3 协方差），每次更新后强制对称。
本模块不含任何随机性。
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from bathy import BathymetryGrid
from exceptions import DivergenceError, OutOfBoundsError
from models import Control, Measurement, State, measure, measurement_jacobian
from utils.linalg import cholesky_with_jitter, solve_spd, symmetrize

N_STATE = 3


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.array(self.mean, dtype=float).reshape(N_STATE))
        object.__setattr__(self, "cov", symmetrize(np.array(self.cov, dtype=float).reshape(N_STATE, N_STATE)))

    @property
    def state(self) -> State:
        return State.from_array(self.mean)


@dataclass(frozen=True)
class UkfParams:
    alpha: float = 1.0
    beta: float = 2.0
    kappa: float = 0.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if not self.alpha ** 2 * (N_STATE + self.kappa) > 0:
            raise ValueError("alpha²·(n + kappa) must be > 0")

    @property
    def lam(self) -> float:
        return self.alpha ** 2 * (N_STATE + self.kappa) - N_STATE

    def weights(self) -> Tuple[np.ndarray, np.ndarray]:
        """返回 (Wm, Wc)"""
        c = N_STATE + self.lam
        wm = np.full(2 * N_STATE + 1, 1.0 / (2.0 * c))
        wc = wm.copy()
        wm[0] = self.lam / c
        wc[0] = self.lam / c + (1.0 - self.alpha ** 2 + self.beta)
        return wm, wc


def _diverged(belief: GaussianBelief, exc: Exception) -> DivergenceError:
    return DivergenceError(f"belief left the map: {exc}", last_belief=belief)


# ---------------------------------------------------------------------------
# EKF

def ekf_predict(b: GaussianBelief, motion, u: Control, Q: np.ndarray, dt: float) -> GaussianBelief:
    """预测：mean' = f(mean)，cov' = F·cov·Fᵀ + Q"""
    try:
        F = motion.jacobian(b.mean, u, dt)
        mean = motion.propagate(b.mean, u, dt)
    except OutOfBoundsError as exc:
        raise _diverged(b, exc) from exc
    return GaussianBelief(mean, F @ b.cov @ F.T + Q)


def ekf_correct(b: GaussianBelief, z: Measurement, grid: BathymetryGrid, R: np.ndarray,
                flip_depth_sign: bool = False) -> GaussianBelief:
    """校正：标准 EKF 更新，H 取当前均值处的量测雅可比"""
    try:
        H = measurement_jacobian(grid, b.state, flip_depth_sign=flip_depth_sign)
        predicted = measure(grid, b.state).as_array()
    except OutOfBoundsError as exc:
        raise _diverged(b, exc) from exc
    S = H @ b.cov @ H.T + R
    # K = P·Hᵀ·S⁻¹，S 对称
    K = solve_spd(S, H @ b.cov).T
    mean = b.mean + K @ (z.as_array() - predicted)
    cov = (np.eye(N_STATE) - K @ H) @ b.cov
    return GaussianBelief(mean, cov)


# ---------------------------------------------------------------------------
# UKF

def ukf_sigma_points(b: GaussianBelief, p: UkfParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """2n+1 个 sigma 点，返回 (points[7,3], Wm, Wc)"""
    c = N_STATE + p.lam
    S = cholesky_with_jitter(c * b.cov)
    points = np.empty((2 * N_STATE + 1, N_STATE))
    points[0] = b.mean
    points[1:N_STATE + 1] = b.mean + S.T
    points[N_STATE + 1:] = b.mean - S.T
    wm, wc = p.weights()
    return points, wm, wc


def _recombine(points: np.ndarray, wm: np.ndarray, wc: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = wm @ points
    d = points - mean
    return mean, (wc[:, None] * d).T @ d


def ukf_predict(b: GaussianBelief, motion, u: Control, Q: np.ndarray, dt: float, p: UkfParams) -> GaussianBelief:
    points, wm, wc = ukf_sigma_points(b, p)
    try:
        propagated = np.array([motion.propagate(x, u, dt) for x in points])
    except OutOfBoundsError as exc:
        raise _diverged(b, exc) from exc
    mean, cov = _recombine(propagated, wm, wc)
    return GaussianBelief(mean, cov + Q)


def ukf_correct(b: GaussianBelief, z: Measurement, grid: BathymetryGrid, R: np.ndarray, p: UkfParams) -> GaussianBelief:
    points, wm, wc = ukf_sigma_points(b, p)
    try:
        gammas = np.array([measure(grid, State.from_array(x)).as_array() for x in points])
    except OutOfBoundsError as exc:
        raise _diverged(b, exc) from exc
    y_hat, S = _recombine(gammas, wm, wc)
    S = S + R
    C = (wc[:, None] * (points - b.mean)).T @ (gammas - y_hat)
    K = solve_spd(S, C.T).T
    mean = b.mean + K @ (z.as_array() - y_hat)
    cov = b.cov - K @ S @ K.T
    return GaussianBelief(mean, cov)


# ---------------------------------------------------------------------------
# 供仿真使用的有状态包装

class EkfLocalizer:
    name = "EKF"

    def __init__(self, grid: BathymetryGrid, motion, noise, dt: float, init: State,
                 flip_depth_sign: bool = False):
        self.grid = grid
        self.motion = motion
        self.noise = noise
        self.dt = dt
        self.flip_depth_sign = flip_depth_sign
        self.belief = GaussianBelief(init.as_array(), noise.P0)

    @property
    def estimate(self) -> State:
        return self.belief.state

    def first(self, z: Measurement) -> State:
        self.belief = ekf_correct(self.belief, z, self.grid, self.noise.R, self.flip_depth_sign)
        return self.estimate

    def step(self, control: Control, z: Measurement) -> State:
        self.belief = ekf_predict(self.belief, self.motion, control, self.noise.Q, self.dt)
        self.belief = ekf_correct(self.belief, z, self.grid, self.noise.R, self.flip_depth_sign)
        return self.estimate


class UkfLocalizer:
    name = "UKF"

    def __init__(self, grid: BathymetryGrid, motion, noise, dt: float, init: State,
                 params: UkfParams = UkfParams()):
        self.grid = grid
        self.motion = motion
        self.noise = noise
        self.dt = dt
        self.params = params
        self.belief = GaussianBelief(init.as_array(), noise.P0)

    @property
    def estimate(self) -> State:
        return self.belief.state

    def first(self, z: Measurement) -> State:
        self.belief = ukf_correct(self.belief, z, self.grid, self.noise.R, self.params)
        return self.estimate

    def step(self, control: Control, z: Measurement) -> State:
        self.belief = ukf_predict(self.belief, self.motion, control, self.noise.Q, self.dt, self.params)
        self.belief = ukf_correct(self.belief, z, self.grid, self.noise.R, self.params)
        return self.estimate
