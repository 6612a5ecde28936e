"""边缘化粒子滤波（Rao-Blackwellized PF）

状态拆分：非线性部分 x^n = (px, py) 用粒子表示，线性部分 x^l = pz
在每个粒子上用一维卡尔曼滤波跟踪。

本问题的结构：f^n 不依赖 pz（A^n = 0），pz 为单积分器（A^l = 1,
f^l = vz·dt），Q 在 (px, py) 与 pz 之间无交叉项（Q^{ln} = 0），
量测 y = h^n + C·pz，其中 h^n = (0, L(px, py))，C = (1, −1)ᵀ。
因此 KF 预测化简为 m' = m + f^l，P' = P + Q^l。
mpf_predict_general 保留完整递推，用于交叉验证化简结果。
"""
import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Tuple

import numpy as np

from bathy import BathymetryGrid, heights_at
from exceptions import ConfigError, NumericError
from filters.particle import (
    ParticleFilterConfig,
    effective_sample_size,
    injection_count,
    normalize_weights,
    sample_gaussian_in_bounds,
    sample_uniform_in_lake,
    systematic_resample,
)
from models import Control, Measurement, State
from utils.linalg import psd_sqrt

log = logging.getLogger(__name__)

MEASUREMENT_C = np.array([1.0, -1.0])


@dataclass
class MpfParticleSet:
    nonlinear: np.ndarray
    linear_means: np.ndarray
    linear_vars: np.ndarray
    weights: np.ndarray
    prior_linear_mean: float = 0.0
    prior_linear_var: float = 0.0
    outside: Optional[np.ndarray] = None
    degenerate: bool = False
    ess: float = float("nan")

    def __post_init__(self):
        if self.outside is None:
            self.outside = np.zeros(len(self.weights), dtype=bool)

    @property
    def n(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class MpfModel:
    """条件线性模型：f^n, f^l, C, h^n, Q^n, Q^l, R"""
    grid: BathymetryGrid
    motion: object
    control: Control
    Q_n: np.ndarray
    Q_l: float
    R: np.ndarray
    C: np.ndarray = MEASUREMENT_C

    @classmethod
    def build(cls, grid: BathymetryGrid, motion, control: Control, noise) -> "MpfModel":
        Q = np.asarray(noise.Q, dtype=float)
        if np.any(Q[:2, 2] != 0.0):
            raise ConfigError("MPF requires zero process-noise cross terms between (px, py) and pz")
        return cls(grid=grid, motion=motion, control=control, Q_n=Q[:2, :2], Q_l=float(Q[2, 2]),
                   R=np.asarray(noise.R, dtype=float))

    def f_n(self, XY: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        return self.motion.horizontal_many(XY, self.control, dt)

    def f_l(self, dt: float) -> float:
        return self.motion.vertical_drift(self.control, dt)

    def h_n(self, XY: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        L, inside = heights_at(self.grid, XY[:, 0], XY[:, 1])
        return np.column_stack([np.zeros(len(XY)), L]), inside


def mpf_init(grid: BathymetryGrid, N: int, init_pose: State, P0: np.ndarray,
             rng: np.random.Generator) -> MpfParticleSet:
    if N < 1:
        raise ValueError("N must be >= 1")
    P0 = np.asarray(P0, dtype=float)
    xy = sample_gaussian_in_bounds(grid, np.array([init_pose.px, init_pose.py]), P0[:2, :2], N, rng)
    return MpfParticleSet(
        nonlinear=xy,
        linear_means=np.full(N, init_pose.pz),
        linear_vars=np.full(N, P0[2, 2]),
        weights=np.full(N, 1.0 / N),
        prior_linear_mean=float(init_pose.pz),
        prior_linear_var=float(P0[2, 2]),
        ess=float(N),
    )


def mpf_measurement_update(ps: MpfParticleSet, z: Measurement, grid: BathymetryGrid,
                           model: MpfModel) -> MpfParticleSet:
    """PF 权重更新 + 逐粒子 KF 量测更新，结果已归一化"""
    H, inside = model.h_n(ps.nonlinear)
    m, P, C = ps.linear_means, ps.linear_vars, model.C
    y_hat = H + np.outer(m, C)
    S = P[:, None, None] * np.outer(C, C)[None] + model.R[None]
    det = S[:, 0, 0] * S[:, 1, 1] - S[:, 0, 1] * S[:, 1, 0]
    if np.any(det <= 0):
        raise NumericError("innovation covariance is not invertible")
    S_inv = np.empty_like(S)
    S_inv[:, 0, 0] = S[:, 1, 1] / det
    S_inv[:, 1, 1] = S[:, 0, 0] / det
    S_inv[:, 0, 1] = -S[:, 0, 1] / det
    S_inv[:, 1, 0] = -S[:, 1, 0] / det

    nu = z.as_array() - y_hat
    nu = np.where(inside[:, None], nu, 0.0)
    maha = np.einsum("ni,nij,nj->n", nu, S_inv, nu)
    likelihood = np.exp(-0.5 * maha) / np.sqrt(det)
    weights = np.where(inside, ps.weights * likelihood, 0.0)

    # K = P·Cᵀ·S⁻¹
    K = P[:, None] * np.einsum("nij,j->ni", S_inv, C)
    means = np.where(inside, m + np.einsum("ni,ni->n", K, nu), m)
    variances = np.where(inside, (1.0 - K @ C) * P, P)

    weights, degenerate = normalize_weights(weights)
    return replace(ps, linear_means=means, linear_vars=variances, weights=weights,
                   outside=~inside, degenerate=degenerate, ess=effective_sample_size(weights))


def mpf_resample(ps: MpfParticleSet, grid: BathymetryGrid, rng: np.random.Generator,
                 inject_fraction: float) -> MpfParticleSet:
    """对 (x^n, m, P) 整体重采样；注入粒子的线性部分重置为初始先验"""
    n = ps.n
    n_inject = injection_count(n, inject_fraction)
    idx = systematic_resample(ps.weights, n - n_inject, rng)
    nonlinear = ps.nonlinear[idx]
    means = ps.linear_means[idx]
    variances = ps.linear_vars[idx]
    outside = ps.outside[idx]
    if n_inject:
        xy, _ = sample_uniform_in_lake(grid, n_inject, rng)
        nonlinear = np.vstack([nonlinear, xy])
        means = np.concatenate([means, np.full(n_inject, ps.prior_linear_mean)])
        variances = np.concatenate([variances, np.full(n_inject, ps.prior_linear_var)])
        outside = np.concatenate([outside, np.zeros(n_inject, dtype=bool)])
    return replace(ps, nonlinear=nonlinear, linear_means=means, linear_vars=variances,
                   weights=np.full(n, 1.0 / n), outside=outside)


def mpf_predict(ps: MpfParticleSet, model: MpfModel, grid: BathymetryGrid, rng: np.random.Generator,
                dt: float) -> MpfParticleSet:
    """PF 预测 + 化简后的 KF 预测"""
    XY, moved = model.f_n(ps.nonlinear, dt)
    XY = XY + rng.standard_normal(XY.shape) @ psd_sqrt(model.Q_n).T
    return replace(
        ps,
        nonlinear=XY,
        linear_means=ps.linear_means + model.f_l(dt),
        linear_vars=ps.linear_vars + model.Q_l,
        outside=~moved,
    )


def mpf_get_estimate(ps: MpfParticleSet) -> State:
    xy = ps.weights @ ps.nonlinear
    return State(float(xy[0]), float(xy[1]), float(ps.weights @ ps.linear_means))


# ---------------------------------------------------------------------------
# 完整形式（参考实现）

@dataclass(frozen=True)
class MpfGeneralModel:
    """x^n' = f^n + A^n·x^l + G^n·q^n，x^l' = f^l + A^l·x^l + G^l·q^l，Cov(q^n, q^l) = Q^{ln}"""
    f_n: Callable[[np.ndarray, float], Tuple[np.ndarray, np.ndarray]]
    f_l: float
    A_n: np.ndarray
    A_l: np.ndarray
    G_n: np.ndarray
    G_l: np.ndarray
    Q_n: np.ndarray
    Q_l: np.ndarray
    Q_ln: np.ndarray

    @classmethod
    def from_reduced(cls, model: MpfModel, dt: float) -> "MpfGeneralModel":
        return cls(
            f_n=model.f_n,
            f_l=model.f_l(dt),
            A_n=np.zeros((2, 1)),
            A_l=np.ones((1, 1)),
            G_n=np.eye(2),
            G_l=np.ones((1, 1)),
            Q_n=np.asarray(model.Q_n, dtype=float),
            Q_l=np.array([[model.Q_l]]),
            Q_ln=np.zeros((2, 1)),
        )


def mpf_predict_general(ps: MpfParticleSet, gm: MpfGeneralModel, rng: np.random.Generator,
                        dt: float) -> MpfParticleSet:
    """完整的 PF 预测与 KF 预测递推（含 Ā^l, Q̄^l, N_t, L_t）"""
    n = ps.n
    f_xy, moved = gm.f_n(ps.nonlinear, dt)
    m = ps.linear_means.reshape(n, 1, 1)
    P = ps.linear_vars.reshape(n, 1, 1)
    A_n, A_l, G_n, G_l = gm.A_n, gm.A_l, gm.G_n, gm.G_l

    # x^n 的预测分布 N(f^n + A^n·m, A^n·P·A^nᵀ + G^n·Q^n·G^nᵀ)
    N_t = A_n[None] @ P @ A_n.T[None] + (G_n @ gm.Q_n @ G_n.T)[None]
    mean_n = f_xy + (A_n[None] @ m)[:, :, 0]
    eps = rng.standard_normal((n, 2))
    xy = np.empty_like(mean_n)
    for i in range(n):
        xy[i] = mean_n[i] + psd_sqrt(N_t[i]) @ eps[i]

    # z_t = x^n' − f^n(x^n)
    z = (xy - f_xy)[:, :, None]
    if np.any(gm.Q_ln):
        GnQn_inv = np.linalg.pinv(G_n @ gm.Q_n)
        W = G_l @ gm.Q_ln.T @ GnQn_inv
        Q_bar = gm.Q_l - gm.Q_ln.T @ np.linalg.pinv(gm.Q_n) @ gm.Q_ln
    else:
        W = np.zeros((1, 2))
        Q_bar = gm.Q_l
    A_bar = A_l - W @ A_n

    L_t = A_bar[None] @ P @ A_n.T[None] @ np.linalg.pinv(N_t)
    means = (A_bar[None] @ m + W[None] @ z + gm.f_l + L_t @ (z - A_n[None] @ m))
    variances = (A_bar[None] @ P @ A_bar.T[None] + (G_l @ Q_bar @ G_l.T)[None]
                 - L_t @ N_t @ np.transpose(L_t, (0, 2, 1)))
    return replace(ps, nonlinear=xy, linear_means=means[:, 0, 0], linear_vars=variances[:, 0, 0],
                   outside=~moved)


# ---------------------------------------------------------------------------

class MpfLocalizer:
    name = "MPF"

    def __init__(self, grid: BathymetryGrid, motion, noise, dt: float, init: State,
                 config: ParticleFilterConfig, rng: np.random.Generator):
        self.grid = grid
        self.motion = motion
        self.noise = noise
        self.dt = dt
        self.config = config
        self.rng = rng
        # 校验 Q 的块结构
        MpfModel.build(grid, motion, None, noise)
        self.particles = mpf_init(grid, config.n_particles, init, noise.P0, rng)
        self.ess_history: List[float] = []
        self.degenerate_steps = 0
        self.estimate = init

    def _update(self, model: MpfModel, z: Measurement) -> State:
        ps = mpf_measurement_update(self.particles, z, self.grid, model)
        self.ess_history.append(ps.ess)
        if ps.degenerate:
            self.degenerate_steps += 1
        estimate = None if self.config.estimate_after_resample else mpf_get_estimate(ps)
        if self.config.ess_threshold is None or ps.ess < self.config.ess_threshold * ps.n:
            ps = mpf_resample(ps, self.grid, self.rng, self.config.inject_fraction)
        self.particles = ps
        self.estimate = estimate if estimate is not None else mpf_get_estimate(ps)
        return self.estimate

    def first(self, z: Measurement) -> State:
        return self._update(MpfModel.build(self.grid, self.motion, None, self.noise), z)

    def step(self, control: Control, z: Measurement) -> State:
        model = MpfModel.build(self.grid, self.motion, control, self.noise)
        self.particles = mpf_predict(self.particles, model, self.grid, self.rng, self.dt)
        return self._update(model, z)
