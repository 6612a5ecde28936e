"""状态、控制、运动与量测模型

状态 x = (px, py, pz)，pz 为深度（向下为正）。
量测 y = (depth, altitude)，depth + altitude = L(px, py)。
所有函数均为纯函数，不注入噪声；噪声由仿真器和滤波器负责。
"""
import enum
import math
from dataclasses import asdict, astuple, dataclass
from typing import Optional, Tuple, Union

import numpy as np

from bathy import BathymetryGrid, FEET_TO_METERS, gradient_at, height_at, heights_at
from exceptions import ConfigError


def _check_finite(name: str, values) -> None:
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"{name} components must be finite")


@dataclass(frozen=True)
class State:
    px: float
    py: float
    pz: float

    def __post_init__(self):
        _check_finite("State", (self.px, self.py, self.pz))

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.pz], dtype=float)

    @classmethod
    def from_array(cls, x) -> "State":
        return cls(float(x[0]), float(x[1]), float(x[2]))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ControlInput:
    vx: float
    vy: float
    vz: float

    def __post_init__(self):
        _check_finite("ControlInput", (self.vx, self.vy, self.vz))

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.vz], dtype=float)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Measurement:
    depth: float
    altitude: float

    def as_array(self) -> np.ndarray:
        return np.array([self.depth, self.altitude], dtype=float)

    @classmethod
    def from_array(cls, z) -> "Measurement":
        return cls(float(z[0]), float(z[1]))


@dataclass(frozen=True)
class MixedMotionParams:
    a: float
    a_d: float
    a_off: float
    b: float
    b_d: float
    b_off: float
    vz: float

    def __post_init__(self):
        _check_finite("MixedMotionParams", astuple(self))
        if self.a_d == 0 or self.b_d == 0:
            raise ConfigError("mixed motion divisors a_d and b_d must be nonzero")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class NoiseConfig:
    Q: np.ndarray
    R: np.ndarray
    P0: np.ndarray

    def __post_init__(self):
        for name, shape in (("Q", (3, 3)), ("R", (2, 2)), ("P0", (3, 3))):
            m = np.array(getattr(self, name), dtype=float)
            if m.shape != shape:
                raise ConfigError(f"{name} must be {shape[0]}x{shape[1]}, got {m.shape}")
            if not np.allclose(m, m.T, atol=1e-12):
                raise ConfigError(f"{name} must be symmetric")
            eigs = np.linalg.eigvalsh(m)
            if eigs.min() < -1e-12 * max(1.0, abs(eigs).max()):
                raise ConfigError(f"{name} must be positive semidefinite")
            if name == "R" and eigs.min() <= 0:
                raise ConfigError("R must be positive definite")
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @classmethod
    def from_velocity(cls, vx: float, vy: float, vz: float) -> "NoiseConfig":
        """默认噪声表：Q = 0.01·diag(vx², vy², (0.3048·vz)²)"""
        return cls(
            Q=0.01 * np.diag([vx ** 2, vy ** 2, (FEET_TO_METERS * vz) ** 2]),
            R=np.diag([FEET_TO_METERS ** 2, FEET_TO_METERS ** 2]),
            P0=np.diag([1.0, 1.0, FEET_TO_METERS ** 2]),
        )

    def to_dict(self) -> dict:
        return {"Q": self.Q.tolist(), "R": self.R.tolist(), "P0": self.P0.tolist()}


# ---------------------------------------------------------------------------
# 运动模型

def step_linear(s: State, u: ControlInput, dt: float) -> State:
    """x' = x + u·dt"""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    return State(s.px + u.vx * dt, s.py + u.vy * dt, s.pz + u.vz * dt)


def step_mixed(s: State, p: MixedMotionParams, grid: BathymetryGrid, dt: float) -> State:
    """水平速度随当地水柱高度变化的混合运动模型"""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    L = height_at(grid, s.px, s.py)
    return State(
        s.px + p.a * (L / p.a_d + p.a_off) * dt,
        s.py + p.b * (L / p.b_d + p.b_off) * dt,
        s.pz + p.vz * dt,
    )


def motion_jacobian_linear() -> np.ndarray:
    return np.eye(3)


def motion_jacobian_mixed(s: State, p: MixedMotionParams, grid: BathymetryGrid, dt: float) -> np.ndarray:
    gx, gy = gradient_at(grid, s.px, s.py)
    ka = p.a / p.a_d * dt
    kb = p.b / p.b_d * dt
    return np.array([
        [1.0 + ka * gx, ka * gy, 0.0],
        [kb * gx, 1.0 + kb * gy, 0.0],
        [0.0, 0.0, 1.0],
    ])


class MotionKind(str, enum.Enum):
    LINEAR = "linear"
    MIXED = "mixed"


Control = Union[ControlInput, MixedMotionParams]


class LinearMotion:
    """线性运动模型句柄"""
    kind = MotionKind.LINEAR

    def propagate(self, x: np.ndarray, control: ControlInput, dt: float) -> np.ndarray:
        return step_linear(State.from_array(x), control, dt).as_array()

    def jacobian(self, x: np.ndarray, control: ControlInput, dt: float) -> np.ndarray:
        return motion_jacobian_linear()

    def propagate_many(self, X: np.ndarray, control: ControlInput, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        return X + control.as_array() * dt, np.ones(len(X), dtype=bool)

    def horizontal_many(self, XY: np.ndarray, control: ControlInput, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        return XY + np.array([control.vx, control.vy]) * dt, np.ones(len(XY), dtype=bool)

    def vertical_drift(self, control: ControlInput, dt: float) -> float:
        return control.vz * dt


class MixedMotion:
    """混合运动模型句柄，依赖水深栅格"""
    kind = MotionKind.MIXED

    def __init__(self, grid: BathymetryGrid):
        self.grid = grid

    def propagate(self, x: np.ndarray, control: MixedMotionParams, dt: float) -> np.ndarray:
        return step_mixed(State.from_array(x), control, self.grid, dt).as_array()

    def jacobian(self, x: np.ndarray, control: MixedMotionParams, dt: float) -> np.ndarray:
        return motion_jacobian_mixed(State.from_array(x), control, self.grid, dt)

    def horizontal_many(self, XY: np.ndarray, p: MixedMotionParams, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        # 越界的样本保持原位，由量测更新将权重置零
        L, inside = heights_at(self.grid, XY[:, 0], XY[:, 1])
        L = np.where(inside, L, 0.0)
        dx = np.where(inside, p.a * (L / p.a_d + p.a_off) * dt, 0.0)
        dy = np.where(inside, p.b * (L / p.b_d + p.b_off) * dt, 0.0)
        return XY + np.column_stack([dx, dy]), inside

    def propagate_many(self, X: np.ndarray, p: MixedMotionParams, dt: float) -> Tuple[np.ndarray, np.ndarray]:
        XY, inside = self.horizontal_many(X[:, :2], p, dt)
        return np.column_stack([XY, X[:, 2] + p.vz * dt]), inside

    def vertical_drift(self, control: MixedMotionParams, dt: float) -> float:
        return control.vz * dt


def make_motion(kind: Union[str, MotionKind], grid: Optional[BathymetryGrid] = None):
    kind = MotionKind(kind)
    if kind == MotionKind.LINEAR:
        return LinearMotion()
    if grid is None:
        raise ConfigError("mixed motion requires a bathymetry grid")
    return MixedMotion(grid)


# ---------------------------------------------------------------------------
# 量测模型

def measure(grid: BathymetryGrid, s: State) -> Measurement:
    """(depth, altitude) = (pz, L − pz)"""
    L = height_at(grid, s.px, s.py)
    return Measurement(depth=s.pz, altitude=L - s.pz)


def measure_many(grid: BathymetryGrid, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    L, inside = heights_at(grid, X[:, 0], X[:, 1])
    return np.column_stack([X[:, 2], L - X[:, 2]]), inside


def measurement_jacobian(grid: BathymetryGrid, s: State, flip_depth_sign: bool = False) -> np.ndarray:
    """H = ∂h/∂x；flip_depth_sign 时深度通道取 −1、高度通道 pz 项取 +1"""
    gx, gy = gradient_at(grid, s.px, s.py)
    if flip_depth_sign:
        return np.array([[0.0, 0.0, -1.0], [gx, gy, 1.0]])
    return np.array([[0.0, 0.0, 1.0], [gx, gy, -1.0]])
