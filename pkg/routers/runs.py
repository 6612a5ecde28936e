from pathlib import Path
from typing import List, Optional

from fastapi import APIRouter, Depends, HTTPException, status
from fastapi.concurrency import run_in_threadpool
from sqlalchemy import select
from sqlalchemy.ext.asyncio import AsyncSession

from config import config
from database import get_db
from reports import aggregate_doc, run_report_doc
from schemas import AggregateReport, BenchmarkConfig, Response, RunReportDoc, StoredBenchmark, StoredRun
from sim import monte_carlo, run_replicate
from tables import BenchmarkRecord, RunRecord, store_benchmark, store_runs

router = APIRouter()


def _load_grid(cfg: BenchmarkConfig):
    # 请求只能引用 LAKE_DIR 下的栅格
    return cfg.lake.load(Path(config.LAKE_DIR), confine=True)


def _workers(cfg: BenchmarkConfig) -> int:
    return min(cfg.workers or 1, config.API_MAX_WORKERS)


@router.post("/runs", response_model=List[RunReportDoc])
async def create_run(cfg: BenchmarkConfig, db: AsyncSession = Depends(get_db)):
    """单次运行（重复实验 0），保存并返回各滤波器报告"""
    grid = await run_in_threadpool(_load_grid, cfg)
    _, reports = await run_in_threadpool(run_replicate, cfg.to_plan(grid), cfg.master_seed, 0)
    await db.run_sync(lambda session: store_runs(session, cfg, reports))
    return [run_report_doc(cfg, r) for r in reports]


@router.get("/runs", response_model=List[StoredRun])
async def list_runs(filter_name: Optional[str] = None, limit: int = 100, db: AsyncSession = Depends(get_db)):
    """查询已保存的运行结果"""
    stmt = select(RunRecord).order_by(RunRecord.id)
    if filter_name:
        stmt = stmt.where(RunRecord.filter_name == filter_name.upper())
    result = await db.execute(stmt.limit(limit))
    return result.scalars().all()


@router.post("/bench", response_model=StoredBenchmark)
async def create_benchmark(cfg: BenchmarkConfig, db: AsyncSession = Depends(get_db)):
    """蒙特卡洛基准测试，保存汇总与逐次结果"""
    grid = await run_in_threadpool(_load_grid, cfg)
    result = await run_in_threadpool(monte_carlo, cfg.to_plan(grid), cfg.runs, cfg.master_seed,
                                     workers=_workers(cfg))
    doc = aggregate_doc(cfg, result)
    record = await db.run_sync(lambda session: store_benchmark(session, cfg, doc, result.flat_reports()))
    return StoredBenchmark(id=record.id, aggregate=doc)


@router.get("/bench/{benchmark_id}", response_model=StoredBenchmark, responses={404: {"model": Response}})
async def get_benchmark(benchmark_id: int, db: AsyncSession = Depends(get_db)):
    record = await db.get(BenchmarkRecord, benchmark_id)
    if not record:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail="基准测试记录不存在"
        )
    return StoredBenchmark(id=record.id, aggregate=AggregateReport.model_validate_json(record.aggregate))
