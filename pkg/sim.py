"""仿真与评估

simulate_truth 生成真值轨迹和带噪量测，run_filter 在同一条真值上运行单个滤波器，
monte_carlo 按重复实验聚合 RMSE、耗时与发散次数。
同一重复实验内所有滤波器共用一条真值（配对比较）。
"""
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from bathy import BathymetryGrid, height_at, in_bounds
from exceptions import BathyLocError, OutOfBoundsError
from filters import FilterSettings, make_localizer
from models import Control, Measurement, NoiseConfig, State, measure
from utils.linalg import psd_sqrt
from utils.seeding import FILTER_ORDER, filter_rng, replicate_seed, truth_rng

log = logging.getLogger(__name__)

AXES = ("x", "y", "z")


@dataclass
class TruthRun:
    states: List[State]
    measurements: List[Measurement]
    controls: List[Control]
    dt: float
    seed: int
    # 真值在 T 步之前离开栅格时为 True，states 只保留离开前的部分
    truncated: bool = False

    @property
    def T(self) -> int:
        return len(self.states)

    def positions(self) -> np.ndarray:
        return np.array([s.as_array() for s in self.states])


@dataclass
class RunReport:
    filter_name: str
    estimates: List[State]
    rmse_x: float
    rmse_y: float
    rmse_z: float
    runtime: Optional[float]
    diverged: bool
    seed: int
    replicate: int = 0
    diverged_at: Optional[int] = None
    degenerate_steps: int = 0
    ess: Optional[List[float]] = None
    truncated: bool = False

    @property
    def rmse(self) -> Tuple[float, float, float]:
        return self.rmse_x, self.rmse_y, self.rmse_z


@dataclass(frozen=True)
class RunPlan:
    """一次重复实验所需的全部输入（可在进程间传递）"""
    grid: BathymetryGrid
    motion: object
    control: Control
    noise: NoiseConfig
    dt: float
    steps: int
    init_pose: State
    filters: Tuple[str, ...] = FILTER_ORDER
    settings: FilterSettings = field(default_factory=FilterSettings)
    process_noise: bool = True
    divergence_radius: Optional[float] = None
    record_runtime: bool = True


# ---------------------------------------------------------------------------
# 真值

def simulate_truth(grid: BathymetryGrid, motion, control: Control, T: int, noise: NoiseConfig, dt: float,
                   seed: int, init_pose: State, *, process_noise: bool = True,
                   measurement_noise: bool = True) -> TruthRun:
    """x_t = f(x_{t−1}, u) + q_t，y_t = h(x_t) + r_t；pz 截断到 [0, L]"""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not in_bounds(grid, init_pose.px, init_pose.py):
        raise OutOfBoundsError(init_pose.px, init_pose.py)
    rng = truth_rng(seed)
    Sq = psd_sqrt(noise.Q) if process_noise else np.zeros((3, 3))
    Sr = psd_sqrt(noise.R) if measurement_noise else np.zeros((2, 2))

    def observe(s: State) -> Measurement:
        z = measure(grid, s).as_array() + Sr @ rng.standard_normal(2)
        return Measurement.from_array(z)

    states = [init_pose]
    measurements = [observe(init_pose)]
    controls: List[Control] = []
    truncated = False
    for t in range(1, T):
        x = motion.propagate(states[-1].as_array(), control, dt) + Sq @ rng.standard_normal(3)
        if not in_bounds(grid, x[0], x[1]):
            log.warning("真值在第 %d 步离开栅格，截断为 %d 步", t, t)
            truncated = True
            break
        x[2] = min(max(x[2], 0.0), height_at(grid, x[0], x[1]))
        s = State.from_array(x)
        states.append(s)
        controls.append(control)
        measurements.append(observe(s))
    return TruthRun(states, measurements, controls, dt, seed, truncated)


# ---------------------------------------------------------------------------
# 评估

def rmse(truth, est) -> Tuple[float, float, float]:
    """逐轴 RMSE = sqrt(Σ(p_g − p_e)² / T)"""
    g = _as_positions(truth)
    e = _as_positions(est)
    if len(g) != len(e):
        raise ValueError(f"length mismatch: truth {len(g)} vs estimate {len(e)}")
    if len(g) == 0:
        raise ValueError("rmse needs at least one step")
    values = np.sqrt(np.mean((g - e) ** 2, axis=0))
    return float(values[0]), float(values[1]), float(values[2])


def _as_positions(seq) -> np.ndarray:
    if isinstance(seq, np.ndarray):
        return seq.reshape(-1, 3).astype(float)
    return np.array([s.as_array() for s in seq], dtype=float).reshape(-1, 3)


def _first_escape(truth: np.ndarray, est: np.ndarray, radius: Optional[float]) -> Optional[int]:
    if radius is None:
        return None
    err = np.hypot(truth[:, 0] - est[:, 0], truth[:, 1] - est[:, 1])
    over = np.flatnonzero(err > radius)
    return int(over[0]) if over.size else None


def run_filter(name: str, truth: TruthRun, grid: BathymetryGrid, motion, noise: NoiseConfig,
               settings: FilterSettings, rng: Optional[np.random.Generator] = None, *,
               replicate: int = 0, divergence_radius: Optional[float] = None,
               record_runtime: bool = True) -> RunReport:
    """在一条真值上运行一个滤波器；滤波器异常记为发散，不向外抛出"""
    init = truth.states[0]
    localizer = make_localizer(name, grid, motion, noise, truth.dt, init, settings, rng)
    estimates: List[State] = []
    diverged_at: Optional[int] = None

    start = time.perf_counter()
    try:
        estimates.append(localizer.first(truth.measurements[0]))
        for t in range(1, truth.T):
            estimates.append(localizer.step(truth.controls[t - 1], truth.measurements[t]))
    except (BathyLocError, ValueError, np.linalg.LinAlgError) as exc:
        diverged_at = len(estimates)
        log.info("%s 在第 %d 步发散: %s", name, diverged_at, exc)
    runtime = time.perf_counter() - start

    g = truth.positions()
    if estimates:
        escaped = _first_escape(g[:len(estimates)], _as_positions(estimates), divergence_radius)
        if escaped is not None:
            diverged_at = escaped
            estimates = estimates[:escaped]

    valid = len(estimates)
    last = estimates[-1] if estimates else init
    estimates = estimates + [last] * (truth.T - valid)
    if valid:
        rx, ry, rz = rmse(g[:valid], _as_positions(estimates[:valid]))
    else:
        rx = ry = rz = math.nan

    ess = getattr(localizer, "ess_history", None)
    return RunReport(
        filter_name=name,
        estimates=estimates,
        rmse_x=rx,
        rmse_y=ry,
        rmse_z=rz,
        runtime=runtime if record_runtime else None,
        diverged=diverged_at is not None,
        seed=truth.seed,
        replicate=replicate,
        diverged_at=diverged_at,
        degenerate_steps=getattr(localizer, "degenerate_steps", 0),
        ess=[float(v) for v in ess] if ess is not None else None,
        truncated=truth.truncated,
    )


# ---------------------------------------------------------------------------
# 重复实验

def run_replicate(plan: RunPlan, master_seed: int, replicate: int) -> Tuple[TruthRun, List[RunReport]]:
    """一次重复实验：一条真值，按规范顺序依次运行所选滤波器"""
    seed = replicate_seed(master_seed, replicate)
    truth = simulate_truth(plan.grid, plan.motion, plan.control, plan.steps, plan.noise, plan.dt, seed,
                           plan.init_pose, process_noise=plan.process_noise)
    reports = []
    for name in FILTER_ORDER:
        if name not in plan.filters:
            continue
        reports.append(run_filter(
            name, truth, plan.grid, plan.motion, plan.noise, plan.settings, filter_rng(seed, name),
            replicate=replicate, divergence_radius=plan.divergence_radius,
            record_runtime=plan.record_runtime,
        ))
    return truth, reports


def _replicate_job(args) -> Tuple[TruthRun, List[RunReport]]:
    plan, master_seed, replicate = args
    return run_replicate(plan, master_seed, replicate)


def _stats(values: Sequence[float]) -> Dict[str, Optional[float]]:
    arr = np.array([v for v in values if v is not None and math.isfinite(v)], dtype=float)
    if arr.size == 0:
        return {"mean": None, "std": None, "min": None, "max": None}
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=0)),
        "min": float(arr.min()),
        "max": float(arr.max()),
    }


def aggregate_reports(reports: Sequence[RunReport]) -> Dict[str, dict]:
    """按滤波器汇总；RMSE 统计只包含有限值，发散次数单独给出"""
    out: Dict[str, dict] = {}
    for name in FILTER_ORDER:
        rows = [r for r in reports if r.filter_name == name]
        if not rows:
            continue
        entry = {
            "runs": len(rows),
            "divergence_count": sum(r.diverged for r in rows),
            "truncated_count": sum(r.truncated for r in rows),
        }
        for axis in AXES:
            entry[f"rmse_{axis}"] = _stats([getattr(r, f"rmse_{axis}") for r in rows])
        runtimes = [r.runtime for r in rows]
        if all(rt is not None for rt in runtimes):
            entry["runtime"] = {**_stats(runtimes), "total": float(sum(runtimes))}
        else:
            entry["runtime"] = None
        out[name] = entry
    return out


@dataclass
class BenchmarkResult:
    truths: List[TruthRun]
    reports: List[List[RunReport]]
    aggregate: Dict[str, dict]

    def flat_reports(self) -> List[RunReport]:
        return [r for rep in self.reports for r in rep]


def monte_carlo(plan: RunPlan, runs: int, master_seed: int, workers: int = 1) -> BenchmarkResult:
    """runs 次重复实验；结果只依赖 master_seed，与 workers 无关"""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    jobs = [(plan, master_seed, k) for k in range(runs)]
    if workers > 1 and runs > 1:
        log.info("并行运行 %d 次重复实验 (workers=%d)", runs, workers)
        with ProcessPoolExecutor(max_workers=min(workers, runs)) as pool:
            results = list(pool.map(_replicate_job, jobs))
    else:
        results = []
        for k, job in enumerate(jobs):
            results.append(_replicate_job(job))
            log.debug("重复实验 %d/%d 完成", k + 1, runs)
    truths = [t for t, _ in results]
    reports = [r for _, r in results]
    aggregate = aggregate_reports([r for rep in reports for r in rep])
    return BenchmarkResult(truths, reports, aggregate)
