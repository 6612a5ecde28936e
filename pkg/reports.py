"""结果输出：CSV（pandas）与 JSON（pydantic 文档）

所有输出只由配置和 master_seed 决定；record_runtime 关闭时不含任何耗时字段，
重复运行逐字节一致。
"""
import logging
import math
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import pandas as pd

from schemas import AggregateReport, AggregateRow, BenchmarkConfig, RunReportDoc
from sim import AXES, BenchmarkResult, RunReport, TruthRun

log = logging.getLogger(__name__)

PARTICLE_FILTERS = ("PF", "MPF")


def _finite_or_none(v: Optional[float]) -> Optional[float]:
    return v if v is not None and math.isfinite(v) else None


# ---------------------------------------------------------------------------
# 表格

def trajectory_frame(truth: TruthRun, reports: Sequence[RunReport]) -> pd.DataFrame:
    """逐步轨迹：t, time, 真值 xyz，每个滤波器的估计 xyz（粒子滤波附带 ESS）"""
    g = truth.positions()
    data = {
        "t": list(range(truth.T)),
        "time": [k * truth.dt for k in range(truth.T)],
        "truth_x": g[:, 0],
        "truth_y": g[:, 1],
        "truth_z": g[:, 2],
    }
    for r in reports:
        for i, axis in enumerate(AXES):
            data[f"{r.filter_name}_{axis}"] = [s.as_array()[i] for s in r.estimates]
        if r.filter_name in PARTICLE_FILTERS and r.ess is not None:
            # 发散后的步没有 ESS
            data[f"{r.filter_name}_ess"] = r.ess + [float("nan")] * (truth.T - len(r.ess))
    return pd.DataFrame(data)


def runs_frame(cfg: BenchmarkConfig, reports: Iterable[RunReport]) -> pd.DataFrame:
    rows = []
    for r in reports:
        rows.append({
            "lake": cfg.lake.name,
            "motion": cfg.motion.kind.value,
            "replicate": r.replicate,
            "seed": r.seed,
            "filter": r.filter_name,
            "rmse_x": r.rmse_x,
            "rmse_y": r.rmse_y,
            "rmse_z": r.rmse_z,
            "diverged": r.diverged,
            "diverged_at": r.diverged_at,
            "truncated": r.truncated,
            "degenerate_steps": r.degenerate_steps,
        })
    df = pd.DataFrame(rows)
    df["diverged_at"] = df["diverged_at"].astype("Int64")
    return df


def timings_frame(cfg: BenchmarkConfig, reports: Iterable[RunReport]) -> pd.DataFrame:
    return pd.DataFrame([
        {"lake": cfg.lake.name, "motion": cfg.motion.kind.value, "replicate": r.replicate,
         "filter": r.filter_name, "runtime": r.runtime}
        for r in reports
    ])


# ---------------------------------------------------------------------------
# 文档

def run_report_doc(cfg: BenchmarkConfig, report: RunReport) -> RunReportDoc:
    return RunReportDoc(
        lake=cfg.lake.name,
        motion=cfg.motion.kind,
        filter_name=report.filter_name,
        replicate=report.replicate,
        seed=report.seed,
        steps=len(report.estimates),
        rmse_x=_finite_or_none(report.rmse_x),
        rmse_y=_finite_or_none(report.rmse_y),
        rmse_z=_finite_or_none(report.rmse_z),
        runtime=report.runtime,
        diverged=report.diverged,
        diverged_at=report.diverged_at,
        truncated=report.truncated,
        degenerate_steps=report.degenerate_steps,
        ess=report.ess,
        estimates=[[s.px, s.py, s.pz] for s in report.estimates],
    )


def aggregate_doc(cfg: BenchmarkConfig, result: BenchmarkResult) -> AggregateReport:
    rows = [
        AggregateRow(lake=cfg.lake.name, motion=cfg.motion.kind, filter_name=name, **entry)
        for name, entry in result.aggregate.items()
    ]
    return AggregateReport(
        lake=cfg.lake.name,
        motion=cfg.motion.kind,
        master_seed=cfg.master_seed,
        runs=cfg.runs,
        steps=cfg.steps,
        dt=cfg.dt,
        results=rows,
    )


# ---------------------------------------------------------------------------
# 写文件

def write_csv(df: pd.DataFrame, path: Path) -> Path:
    df.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    log.info("已写入 %s (%d 行)", path, len(df))
    return path


def write_json(doc, path: Path) -> Path:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(doc.model_dump_json(indent=2))
        fh.write("\n")
    log.info("已写入 %s", path)
    return path


def write_run_outputs(cfg: BenchmarkConfig, truth: TruthRun, reports: Sequence[RunReport], out_dir: Path,
                      formats: Sequence[str] = ("csv", "json")) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        written.append(write_csv(trajectory_frame(truth, reports), out_dir / "trajectory.csv"))
    if "json" in formats:
        for r in reports:
            written.append(write_json(run_report_doc(cfg, r), out_dir / f"run_{r.filter_name}.json"))
    return written


def write_bench_outputs(cfg: BenchmarkConfig, result: BenchmarkResult, out_dir: Path,
                        formats: Sequence[str] = ("csv", "json")) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = result.flat_reports()
    written = []
    if "csv" in formats:
        written.append(write_csv(runs_frame(cfg, reports), out_dir / "runs.csv"))
        if cfg.record_runtime:
            written.append(write_csv(timings_frame(cfg, reports), out_dir / "timings.csv"))
    if "json" in formats:
        written.append(write_json(aggregate_doc(cfg, result), out_dir / "aggregate.json"))
    return written
