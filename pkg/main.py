import logging
from contextlib import asynccontextmanager

import uvicorn
from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from config import config, configure_logging
from database import init_db_async
from exceptions import BathyLocError
from routers import lakes, runs
from schemas import Response

log = logging.getLogger(__name__)


@asynccontextmanager
async def lifespan(app: FastAPI):
    # 启动时执行
    configure_logging()
    log.info("bathyloc 服务启动中...")
    await init_db_async()
    log.info("服务启动完成")
    yield
    log.info("服务关闭中...")


app = FastAPI(
    title=config.APP_NAME,
    version=config.VERSION,
    description="水深辅助 AUV 定位基准测试 API",
    lifespan=lifespan
)

# 路由注册
app.include_router(lakes.router, prefix="/api/lakes", tags=["湖泊"])
app.include_router(runs.router, prefix="/api", tags=["运行"])


def _error(status_code: int, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status_code,
        content=Response(success=False, message=message, code=status_code).model_dump()
    )


# 全局异常处理
@app.exception_handler(HTTPException)
async def http_exception_handler(request, exc):
    return _error(exc.status_code, str(exc.detail))


@app.exception_handler(BathyLocError)
async def bathyloc_exception_handler(request, exc):
    # 配置/解析错误 400，运行期错误 422
    return _error(400 if exc.exit_code == 2 else 422, exc.message)


@app.exception_handler(Exception)
async def general_exception_handler(request, exc):
    log.exception("未处理的异常")
    return _error(500, "服务器内部错误")


# 健康检查
@app.get("/")
async def health_check():
    return {
        "status": "ok",
        "message": "bathyloc 运行正常",
        "version": config.VERSION
    }


if __name__ == "__main__":
    uvicorn.run(
        "main:app",
        host=config.API_HOST,
        port=config.API_PORT,
        reload=config.DEBUG
    )
