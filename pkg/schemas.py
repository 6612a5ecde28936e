from enum import Enum
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from bathy import BathymetryGrid, SyntheticLakeSpec, generate_synthetic_lake, read_grid
from exceptions import ConfigError
from filters import FilterSettings
from filters.gaussian import UkfParams
from models import ControlInput, MixedMotionParams, MotionKind, NoiseConfig, State, make_motion
from sim import RunPlan
from utils.seeding import FILTER_ORDER


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class FilterName(str, Enum):
    EKF = "EKF"
    UKF = "UKF"
    PF = "PF"
    MPF = "MPF"


# 湖泊
class LakeConfig(_Strict):
    name: str = "lake"
    path: Optional[str] = None
    synthetic: Optional[SyntheticLakeSpec] = None

    @model_validator(mode="after")
    def check_source(self):
        if (self.path is None) == (self.synthetic is None):
            raise ValueError("lake needs exactly one of 'path' or 'synthetic'")
        return self

    def load(self, base_dir: Optional[Path] = None, confine: bool = False) -> BathymetryGrid:
        """confine=True 时 path 必须是 base_dir 下的相对路径"""
        if self.synthetic is not None:
            return generate_synthetic_lake(self.synthetic)
        path = Path(self.path)
        if confine:
            if base_dir is None or path.is_absolute():
                raise ConfigError(f"lake path must be relative to the lake directory: {self.path}")
            root = Path(base_dir).resolve()
            path = (root / path).resolve()
            if root not in path.parents:
                raise ConfigError(f"lake path escapes the lake directory: {self.path}")
        elif base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return read_grid(path)


# 运动
class LinearMotionConfig(_Strict):
    vx: float
    vy: float
    vz: float

    def to_control(self) -> ControlInput:
        return ControlInput(self.vx, self.vy, self.vz)


class MixedMotionConfig(_Strict):
    a: float
    a_d: float
    a_off: float
    b: float
    b_d: float
    b_off: float
    vz: float

    @field_validator("a_d", "b_d")
    @classmethod
    def validate_divisor(cls, v):
        if v == 0:
            raise ValueError("divisor must be nonzero")
        return v

    def to_control(self) -> MixedMotionParams:
        return MixedMotionParams(self.a, self.a_d, self.a_off, self.b, self.b_d, self.b_off, self.vz)


class MotionConfig(_Strict):
    kind: MotionKind = MotionKind.LINEAR
    linear: Optional[LinearMotionConfig] = None
    mixed: Optional[MixedMotionConfig] = None

    @model_validator(mode="after")
    def check_selected(self):
        if getattr(self, self.kind.value) is None:
            raise ValueError(f"motion kind '{self.kind.value}' selected but its parameter block is missing")
        return self

    def control(self) -> Union[ControlInput, MixedMotionParams]:
        return getattr(self, self.kind.value).to_control()


# 噪声
Matrix = List[List[float]]


class NoiseSpec(_Strict):
    """未给出的矩阵取默认表：Q 由线性运动速度决定，R 与 P0 为固定值"""
    Q: Optional[Matrix] = None
    R: Optional[Matrix] = None
    P0: Optional[Matrix] = None

    def build(self, motion: MotionConfig) -> NoiseConfig:
        if self.Q is None and motion.linear is None:
            raise ValueError("noise.Q is required when the motion block has no linear velocities")
        lin = motion.linear or LinearMotionConfig(vx=0.0, vy=0.0, vz=0.0)
        defaults = NoiseConfig.from_velocity(lin.vx, lin.vy, lin.vz)
        return NoiseConfig(
            Q=defaults.Q if self.Q is None else self.Q,
            R=defaults.R if self.R is None else self.R,
            P0=defaults.P0 if self.P0 is None else self.P0,
        )


# 滤波器参数
class UkfConfig(_Strict):
    alpha: float = Field(1.0, gt=0)
    beta: float = 2.0
    kappa: float = 0.0


class ParticleConfig(_Strict):
    n_pf: int = Field(5000, ge=1)
    n_mpf: int = Field(300, ge=1)
    inject_fraction: float = Field(0.05, ge=0.0, lt=1.0)
    ess_threshold: Optional[float] = Field(None, gt=0.0, le=1.0)
    pf_estimate_after_resample: bool = True
    mpf_estimate_after_resample: bool = False


class PoseConfig(_Strict):
    px: float
    py: float
    pz: float = Field(ge=0.0)

    def to_state(self) -> State:
        return State(self.px, self.py, self.pz)


class BenchmarkConfig(_Strict):
    lake: LakeConfig
    motion: MotionConfig
    noise: NoiseSpec = NoiseSpec()
    init_pose: PoseConfig
    dt: float = Field(1.0, gt=0)
    steps: int = Field(ge=1)
    runs: int = Field(1, ge=1)
    filters: List[FilterName] = Field(default_factory=lambda: [FilterName(n) for n in FILTER_ORDER])
    ukf: UkfConfig = UkfConfig()
    particles: ParticleConfig = ParticleConfig()
    master_seed: int = Field(0, ge=0)
    process_noise: bool = True
    flip_depth_jacobian: bool = False
    divergence_radius: Optional[float] = Field(None, gt=0)
    record_runtime: bool = True
    workers: Optional[int] = Field(None, ge=1)

    @field_validator("filters")
    @classmethod
    def validate_filters(cls, v):
        if not v:
            raise ValueError("at least one filter is required")
        # 去重并按规范顺序排列
        return [FilterName(n) for n in FILTER_ORDER if FilterName(n) in v]

    @model_validator(mode="after")
    def check_noise(self):
        self.noise.build(self.motion)
        return self

    def noise_config(self) -> NoiseConfig:
        return self.noise.build(self.motion)

    def filter_settings(self) -> FilterSettings:
        p = self.particles
        return FilterSettings(
            n_pf=p.n_pf,
            n_mpf=p.n_mpf,
            inject_fraction=p.inject_fraction,
            ess_threshold=p.ess_threshold,
            pf_estimate_after_resample=p.pf_estimate_after_resample,
            mpf_estimate_after_resample=p.mpf_estimate_after_resample,
            ukf=UkfParams(self.ukf.alpha, self.ukf.beta, self.ukf.kappa),
            flip_depth_jacobian=self.flip_depth_jacobian,
        )

    def filter_names(self) -> List[str]:
        return [f.value for f in self.filters]

    def to_plan(self, grid: BathymetryGrid) -> RunPlan:
        return RunPlan(
            grid=grid,
            motion=make_motion(self.motion.kind, grid),
            control=self.motion.control(),
            noise=self.noise_config(),
            dt=self.dt,
            steps=self.steps,
            init_pose=self.init_pose.to_state(),
            filters=tuple(self.filter_names()),
            settings=self.filter_settings(),
            process_noise=self.process_noise,
            divergence_radius=self.divergence_radius,
            record_runtime=self.record_runtime,
        )


class OutputConfig(_Strict):
    out_dir: Optional[str] = None
    formats: List[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])
    store: bool = False


class CliConfig(BenchmarkConfig):
    """命令行配置文件：BenchmarkConfig + 输出设置"""
    output: OutputConfig = OutputConfig()
    note: Optional[str] = None


# 报告
class RunReportDoc(_Strict):
    report_version: Literal[1] = 1
    lake: str
    motion: MotionKind
    filter_name: FilterName
    replicate: int
    seed: int
    steps: int
    rmse_x: Optional[float]
    rmse_y: Optional[float]
    rmse_z: Optional[float]
    runtime: Optional[float]
    diverged: bool
    diverged_at: Optional[int] = None
    truncated: bool = False
    degenerate_steps: int = 0
    ess: Optional[List[float]] = None
    estimates: List[List[float]]


class AxisStats(_Strict):
    mean: Optional[float]
    std: Optional[float]
    min: Optional[float]
    max: Optional[float]


class RuntimeStats(AxisStats):
    total: float


class AggregateRow(_Strict):
    lake: str
    motion: MotionKind
    filter_name: FilterName
    runs: int
    rmse_x: AxisStats
    rmse_y: AxisStats
    rmse_z: AxisStats
    runtime: Optional[RuntimeStats]
    divergence_count: int
    truncated_count: int


class AggregateReport(_Strict):
    report_version: Literal[1] = 1
    lake: str
    motion: MotionKind
    master_seed: int
    runs: int
    steps: int
    dt: float
    results: List[AggregateRow]


# 通用错误响应
class Response(BaseModel):
    success: bool
    message: str
    code: int


class LakeSummary(BaseModel):
    ncols: int
    nrows: int
    cell_size: float
    min_height: Optional[float]
    max_height: Optional[float]
    world_bounds: List[float]
    interpolable_bounds: List[float]
    valid_fraction: float


class GeneratedLake(BaseModel):
    summary: LakeSummary
    esri_ascii: str


class InspectRequest(BaseModel):
    esri_ascii: str


class StoredBenchmark(BaseModel):
    id: int
    aggregate: AggregateReport


class StoredRun(BaseModel):
    id: int
    benchmark_id: Optional[int]
    lake: str
    motion: str
    filter_name: str
    replicate: int
    seed: int
    rmse_x: Optional[float]
    rmse_y: Optional[float]
    rmse_z: Optional[float]
    runtime: Optional[float]
    diverged: bool

    model_config = ConfigDict(from_attributes=True)


SCHEMA_DOCUMENTS: Dict[str, type] = {
    "config": CliConfig,
    "run_report": RunReportDoc,
    "aggregate_report": AggregateReport,
}
