import logging
import os

import psutil
from dotenv import load_dotenv

load_dotenv()


def _default_workers() -> int:
    cores = psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
    return max(1, int(cores))


class Config:
    # 应用配置
    APP_NAME = "bathyloc"
    VERSION = "1.0.0"
    DEBUG = os.getenv("DEBUG", "False").lower() == "true"
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()

    # 数据库配置（结果存储）
    DATABASE_URL = os.getenv("DATABASE_URL", "sqlite+aiosqlite:///./bathyloc.db")

    # 输出与预设
    OUTPUT_DIR = os.getenv("OUTPUT_DIR", "./out")
    PRESET_DIR = os.getenv("PRESET_DIR", os.path.join(os.path.dirname(os.path.abspath(__file__)), "presets"))
    # 服务端只读取该目录下的 ESRI 栅格
    LAKE_DIR = os.getenv("LAKE_DIR", "./lakes")

    # 并行配置
    DEFAULT_WORKERS = int(os.getenv("DEFAULT_WORKERS", "0")) or _default_workers()
    # 服务端单次基准测试允许的最大进程数
    API_MAX_WORKERS = max(1, int(os.getenv("API_MAX_WORKERS", "1")))

    # 服务配置
    API_HOST = os.getenv("API_HOST", "0.0.0.0")
    API_PORT = int(os.getenv("API_PORT", "3001"))

    # 报告版本
    REPORT_VERSION = 1


config = Config()


def configure_logging() -> None:
    """初始化日志"""
    level = logging.DEBUG if config.DEBUG else getattr(logging, config.LOG_LEVEL, logging.INFO)
    root = logging.getLogger()
    if not any(getattr(h, "_bathyloc", False) for h in root.handlers):
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        handler._bathyloc = True
        root.addHandler(handler)
    root.setLevel(level)
