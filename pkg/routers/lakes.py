from fastapi import APIRouter

from bathy import SyntheticLakeSpec, dump_esri_ascii, generate_synthetic_lake, load_esri_ascii
from schemas import GeneratedLake, InspectRequest, LakeSummary

router = APIRouter()


@router.post("/generate", response_model=GeneratedLake)
async def generate_lake(spec: SyntheticLakeSpec):
    """生成合成湖泊，返回概要与 ESRI ASCII 文本"""
    grid = generate_synthetic_lake(spec)
    return GeneratedLake(summary=LakeSummary(**grid.summary()), esri_ascii=dump_esri_ascii(grid))


@router.post("/inspect", response_model=LakeSummary)
async def inspect_lake(request: InspectRequest):
    """解析 ESRI ASCII 文本并返回栅格概要"""
    grid = load_esri_ascii(request.esri_ascii)
    return LakeSummary(**grid.summary())
