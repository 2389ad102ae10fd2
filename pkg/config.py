"""
配置模块 - 从环境变量加载配置
"""
import os
from dotenv import load_dotenv

# 加载 .env 文件
load_dotenv()


def _env_int(name: str, default: int) -> int:
    """读取整数环境变量，格式错误时退回默认值（由 validate 报告）"""
    raw = os.getenv(name, "")
    try:
        return int(raw) if raw.strip() else default
    except ValueError:
        return default


class Config:
    """应用配置"""

    # 并行
    THREADS: int = _env_int("CHAOTHERM_THREADS", 1)

    # 输出与缓存
    OUT_DIR: str = os.getenv("CHAOTHERM_OUT", "runs/latest")
    CACHE_DIR: str = os.getenv("CHAOTHERM_CACHE_DIR", "")

    # 日志
    LOG_LEVEL: str = os.getenv("CHAOTHERM_LOG_LEVEL", "WARNING").upper()

    # 参考曲线（GOE / GUE / Poisson 抽样）使用的种子
    REFERENCE_SEED: int = _env_int("CHAOTHERM_REFERENCE_SEED", 20240601)

    @classmethod
    def validate(cls) -> list[str]:
        """验证配置，返回有问题的配置项列表"""
        problems = []
        for name in ("CHAOTHERM_THREADS", "CHAOTHERM_REFERENCE_SEED"):
            raw = os.getenv(name, "").strip()
            if raw and not raw.lstrip("-").isdigit():
                problems.append(name)
        if cls.THREADS < 1:
            problems.append("CHAOTHERM_THREADS")
        if cls.LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            problems.append("CHAOTHERM_LOG_LEVEL")
        return sorted(set(problems))


config = Config()
