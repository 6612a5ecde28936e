"""基于深度/高度量测的粒子滤波

每步顺序：运动更新 → 量测加权 → 归一化 → 重采样 → 位姿估计。
重采样使用系统（低方差）重采样，并按 inject_fraction 在湖内均匀注入随机粒子。
"""
import logging
from dataclasses import dataclass, replace
from typing import List, Optional, Tuple

import numpy as np

from bathy import BathymetryGrid, heights_at, in_bounds, in_bounds_many
from exceptions import NumericError, OutOfBoundsError
from models import Control, Measurement, State, measure_many
from utils.linalg import psd_sqrt

log = logging.getLogger(__name__)

DEGENERATE_TOTAL = 1e-300
REJECTION_BUDGET = 100


@dataclass
class ParticleSet:
    positions: np.ndarray
    weights: np.ndarray
    outside: Optional[np.ndarray] = None
    degenerate: bool = False
    ess: float = float("nan")

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.outside is None:
            self.outside = np.zeros(len(self.weights), dtype=bool)

    @property
    def n(self) -> int:
        return len(self.weights)


@dataclass
class ParticleFilterConfig:
    n_particles: int = 5000
    inject_fraction: float = 0.05
    # None 表示每步都重采样
    ess_threshold: Optional[float] = None
    estimate_after_resample: bool = True

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if not 0.0 <= self.inject_fraction < 1.0:
            raise ValueError("inject_fraction must be in [0, 1)")
        if self.ess_threshold is not None and not 0.0 < self.ess_threshold <= 1.0:
            raise ValueError("ess_threshold must be in (0, 1]")


# ---------------------------------------------------------------------------
# 公共工具

def effective_sample_size(weights: np.ndarray) -> float:
    return float(1.0 / np.sum(np.square(weights)))


def systematic_resample(weights: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """低方差重采样：一个均匀偏移 + m 个等间距点"""
    if m <= 0:
        return np.empty(0, dtype=np.intp)
    positions = (rng.uniform() + np.arange(m)) / m
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    idx = np.searchsorted(cumulative, positions, side="right")
    return np.minimum(idx, len(weights) - 1)


def injection_count(n: int, inject_fraction: float) -> int:
    """注入粒子数，保留 ⌈(1 − f)·N⌉ 个重采样粒子"""
    return int(np.floor(inject_fraction * n + 1e-9))


def sample_gaussian_in_bounds(grid: BathymetryGrid, mean: np.ndarray, cov: np.ndarray, n: int,
                              rng: np.random.Generator) -> np.ndarray:
    """高斯采样，前两维 (px, py) 落在湖外的样本拒绝重抽"""
    mean = np.asarray(mean, dtype=float)
    if not in_bounds(grid, mean[0], mean[1]):
        raise OutOfBoundsError(float(mean[0]), float(mean[1]))
    S = psd_sqrt(cov)
    out = np.empty((n, len(mean)))
    filled = 0
    draws = 0
    while filled < n:
        need = n - filled
        cand = mean + rng.standard_normal((need, len(mean))) @ S.T
        draws += need
        ok = in_bounds_many(grid, cand[:, 0], cand[:, 1])
        k = int(ok.sum())
        out[filled:filled + k] = cand[ok]
        filled += k
        if filled < n and draws >= REJECTION_BUDGET * n:
            raise NumericError(f"rejection sampling failed after {draws} draws")
    return out


def sample_uniform_in_lake(grid: BathymetryGrid, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """在可插值区域内均匀采样 (px, py)，返回位置与当地高度"""
    if n <= 0:
        return np.empty((0, 2)), np.empty(0)
    xmin, xmax, ymin, ymax = grid.interpolable_bounds()
    chunks: List[np.ndarray] = []
    found = 0
    for _ in range(REJECTION_BUDGET):
        cand = np.column_stack([rng.uniform(xmin, xmax, size=n), rng.uniform(ymin, ymax, size=n)])
        ok = in_bounds_many(grid, cand[:, 0], cand[:, 1])
        chunks.append(cand[ok])
        found += int(ok.sum())
        if found >= n:
            break
    else:
        raise NumericError("lake has too little valid area for random injection")
    xy = np.vstack(chunks)[:n]
    L, _ = heights_at(grid, xy[:, 0], xy[:, 1])
    return xy, L


def normalize_weights(weights: np.ndarray) -> Tuple[np.ndarray, bool]:
    total = float(np.sum(weights))
    if not np.isfinite(total) or total < DEGENERATE_TOTAL:
        log.debug("权重退化 (total=%.3g)，重置为均匀分布", total)
        return np.full(len(weights), 1.0 / len(weights)), True
    return weights / total, False


# ---------------------------------------------------------------------------
# PF

def pf_init(grid: BathymetryGrid, N: int, init_pose: State, P0: np.ndarray,
            rng: np.random.Generator) -> ParticleSet:
    if N < 1:
        raise ValueError("N must be >= 1")
    positions = sample_gaussian_in_bounds(grid, init_pose.as_array(), P0, N, rng)
    return ParticleSet(positions, np.full(N, 1.0 / N), ess=float(N))


def pf_motion_update(ps: ParticleSet, motion, u: Control, Q: np.ndarray, dt: float,
                     rng: np.random.Generator) -> ParticleSet:
    """逐粒子传播并叠加 N(0, Q) 噪声；无法传播的粒子原地保留并标记"""
    X, moved = motion.propagate_many(ps.positions, u, dt)
    X = X + rng.standard_normal(X.shape) @ psd_sqrt(Q).T
    return replace(ps, positions=X, outside=~moved)


def pf_sensor_update(ps: ParticleSet, z: Measurement, grid: BathymetryGrid, R: np.ndarray) -> ParticleSet:
    """w ← w·exp(−½·νᵀR⁻¹ν)，湖外粒子权重为 0；结果未归一化"""
    Z, inside = measure_many(grid, ps.positions)
    nu = z.as_array() - Z
    R_inv = np.linalg.inv(R)
    with np.errstate(invalid="ignore"):
        maha = np.einsum("ni,ij,nj->n", nu, R_inv, nu)
        factor = np.where(inside, np.exp(-0.5 * np.where(inside, maha, 0.0)), 0.0)
    return replace(ps, weights=ps.weights * factor, outside=~inside)


def pf_normalize(ps: ParticleSet) -> ParticleSet:
    weights, degenerate = normalize_weights(ps.weights)
    return replace(ps, weights=weights, degenerate=degenerate, ess=effective_sample_size(weights))


def pf_resample(ps: ParticleSet, grid: BathymetryGrid, rng: np.random.Generator,
                inject_fraction: float) -> ParticleSet:
    n = ps.n
    n_inject = injection_count(n, inject_fraction)
    idx = systematic_resample(ps.weights, n - n_inject, rng)
    positions = ps.positions[idx]
    outside = ps.outside[idx]
    if n_inject:
        xy, L = sample_uniform_in_lake(grid, n_inject, rng)
        pz = rng.uniform(0.0, L)
        positions = np.vstack([positions, np.column_stack([xy, pz])])
        outside = np.concatenate([outside, np.zeros(n_inject, dtype=bool)])
    return replace(ps, positions=positions, weights=np.full(n, 1.0 / n), outside=outside)


def pf_get_pose(ps: ParticleSet) -> State:
    """加权平均位姿"""
    return State.from_array(ps.weights @ ps.positions)


def pf_step(ps: ParticleSet, u: Optional[Control], z: Measurement, config: ParticleFilterConfig,
            grid: BathymetryGrid, rng: np.random.Generator, *, motion, noise, dt: float
            ) -> Tuple[ParticleSet, State]:
    """一步完整循环；u 为 None 时跳过运动更新（初始时刻）"""
    if u is not None:
        ps = pf_motion_update(ps, motion, u, noise.Q, dt, rng)
    ps = pf_sensor_update(ps, z, grid, noise.R)
    ps = pf_normalize(ps)
    estimate = None if config.estimate_after_resample else pf_get_pose(ps)
    if config.ess_threshold is None or ps.ess < config.ess_threshold * ps.n:
        ps = pf_resample(ps, grid, rng, config.inject_fraction)
    if estimate is None:
        estimate = pf_get_pose(ps)
    return ps, estimate


class PfLocalizer:
    name = "PF"

    def __init__(self, grid: BathymetryGrid, motion, noise, dt: float, init: State,
                 config: ParticleFilterConfig, rng: np.random.Generator):
        self.grid = grid
        self.motion = motion
        self.noise = noise
        self.dt = dt
        self.config = config
        self.rng = rng
        self.particles = pf_init(grid, config.n_particles, init, noise.P0, rng)
        self.ess_history: List[float] = []
        self.degenerate_steps = 0
        self.estimate = init

    def _advance(self, control: Optional[Control], z: Measurement) -> State:
        self.particles, self.estimate = pf_step(
            self.particles, control, z, self.config, self.grid, self.rng,
            motion=self.motion, noise=self.noise, dt=self.dt,
        )
        self.ess_history.append(self.particles.ess)
        if self.particles.degenerate:
            self.degenerate_steps += 1
        return self.estimate

    def first(self, z: Measurement) -> State:
        return self._advance(None, z)

    def step(self, control: Control, z: Measurement) -> State:
        return self._advance(control, z)
