from sqlalchemy import create_engine
from sqlalchemy.ext.asyncio import AsyncSession, async_sessionmaker, create_async_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from config import config


def sync_url(url: str) -> str:
    """异步驱动 URL 转为同步驱动（命令行 --store 使用）"""
    return url.replace("+aiosqlite", "").replace("+aiomysql", "+pymysql")


def async_url(url: str) -> str:
    if url.startswith("sqlite://"):
        return url.replace("sqlite://", "sqlite+aiosqlite://", 1)
    return url


# 创建数据库引擎
engine = create_engine(
    sync_url(config.DATABASE_URL),
    echo=config.DEBUG
)

# 创建异步数据库引擎
async_engine = create_async_engine(
    async_url(config.DATABASE_URL),
    echo=config.DEBUG
)

# 创建会话工厂
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)
AsyncSessionLocal = async_sessionmaker(
    async_engine,
    class_=AsyncSession,
    expire_on_commit=False
)

# 创建基础模型类
Base = declarative_base()


def _register_tables() -> None:
    import tables  # noqa: F401  注册表结构


def init_db(bind=None) -> None:
    """同步建表"""
    _register_tables()
    Base.metadata.create_all(bind=bind or engine)


async def init_db_async(bind=None) -> None:
    """异步建表（服务启动时）"""
    _register_tables()
    async with (bind or async_engine).begin() as conn:
        await conn.run_sync(Base.metadata.create_all)


# 依赖注入：获取数据库会话
async def get_db():
    """获取异步数据库会话"""
    async with AsyncSessionLocal() as session:
        try:
            yield session
        finally:
            await session.close()


def get_sync_db():
    """获取同步数据库会话"""
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()
