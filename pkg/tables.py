"""结果存储表"""
import math
from typing import Iterable, Optional

from sqlalchemy import Boolean, Column, DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import Session, relationship
from sqlalchemy.sql import func

from database import Base
from schemas import AggregateReport, BenchmarkConfig
from sim import RunReport


def _nullable(v: Optional[float]) -> Optional[float]:
    return v if v is not None and math.isfinite(v) else None


class BenchmarkRecord(Base):
    __tablename__ = "benchmarks"

    id = Column(Integer, primary_key=True, index=True)
    lake = Column(String(100), nullable=False, index=True)
    motion = Column(String(20), nullable=False)
    master_seed = Column(Integer, nullable=False)
    runs = Column(Integer, nullable=False)
    config = Column(Text, nullable=False)
    aggregate = Column(Text, nullable=False)
    created_at = Column(DateTime(timezone=True), server_default=func.now())

    run_records = relationship("RunRecord", back_populates="benchmark")


class RunRecord(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    benchmark_id = Column(Integer, ForeignKey("benchmarks.id"), nullable=True)
    lake = Column(String(100), nullable=False)
    motion = Column(String(20), nullable=False)
    filter_name = Column(String(10), nullable=False, index=True)
    replicate = Column(Integer, nullable=False)
    seed = Column(Integer, nullable=False)
    rmse_x = Column(Float, nullable=True)
    rmse_y = Column(Float, nullable=True)
    rmse_z = Column(Float, nullable=True)
    runtime = Column(Float, nullable=True)
    diverged = Column(Boolean, default=False)
    created_at = Column(DateTime(timezone=True), server_default=func.now())

    benchmark = relationship("BenchmarkRecord", back_populates="run_records")


def _run_record(cfg: BenchmarkConfig, r: RunReport, benchmark_id: Optional[int] = None) -> RunRecord:
    return RunRecord(
        benchmark_id=benchmark_id,
        lake=cfg.lake.name,
        motion=cfg.motion.kind.value,
        filter_name=r.filter_name,
        replicate=r.replicate,
        seed=r.seed,
        rmse_x=_nullable(r.rmse_x),
        rmse_y=_nullable(r.rmse_y),
        rmse_z=_nullable(r.rmse_z),
        runtime=r.runtime,
        diverged=r.diverged,
    )


def store_runs(db: Session, cfg: BenchmarkConfig, reports: Iterable[RunReport]) -> list:
    """保存单次运行的各滤波器结果"""
    records = [_run_record(cfg, r) for r in reports]
    db.add_all(records)
    db.commit()
    for rec in records:
        db.refresh(rec)
    return records


def store_benchmark(db: Session, cfg: BenchmarkConfig, aggregate: AggregateReport,
                    reports: Iterable[RunReport]) -> BenchmarkRecord:
    """保存基准测试汇总及逐次结果"""
    bench = BenchmarkRecord(
        lake=cfg.lake.name,
        motion=cfg.motion.kind.value,
        master_seed=cfg.master_seed,
        runs=cfg.runs,
        config=cfg.model_dump_json(),
        aggregate=aggregate.model_dump_json(),
    )
    db.add(bench)
    db.flush()
    db.add_all([_run_record(cfg, r, bench.id) for r in reports])
    db.commit()
    db.refresh(bench)
    return bench
