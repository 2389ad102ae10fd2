"""
并行蒙特卡洛工具 - 种子流、线程池映射、按固定顺序的归约
"""
import logging
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from joblib import Parallel, delayed

from app.core.errors import ParameterError

logger = logging.getLogger(__name__)


def resolve_workers(threads: int | None, fallback: int = 1) -> int:
    """线程数：显式参数优先，其次是环境变量给出的 fallback"""
    workers = fallback if threads is None else threads
    if workers < 1:
        raise ParameterError(f"线程数必须 ≥ 1: {workers}")
    return int(workers)


def realization_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """(主种子, 实现编号) → 独立的 SeedSequence，与调度顺序无关"""
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))


def realization_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(realization_seed(master_seed, index))


def stream_seed(master_seed: int, index: int) -> int:
    """给只接受整数种子的函数使用的 64 位种子"""
    return int(realization_seed(master_seed, index).generate_state(1, dtype=np.uint64)[0])


def ordered_map(func: Callable[..., Any], items: Sequence[Any], workers: int = 1) -> list[Any]:
    """
    在线程池中对 items 逐个调用 func，结果按输入顺序返回

    workers = 1 时直接顺序执行。numpy/scipy 的稠密对角化会释放 GIL，线程即可并行。
    """
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    logger.info("并行执行 %d 个任务，线程数 %d", len(items), workers)
    return Parallel(n_jobs=workers, prefer="threads")(delayed(func)(item) for item in items)


def pairwise_sum(values: Sequence[np.ndarray]) -> np.ndarray:
    """固定树形顺序的两两求和，结果不依赖线程数"""
    if not values:
        raise ParameterError("没有可归约的数据")
    level = [np.asarray(v, dtype=float) for v in values]
    while len(level) > 1:
        paired = [level[i] + level[i + 1] for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            paired.append(level[-1])
        level = paired
    return level[0]


def ordered_mean_std(samples: Iterable[np.ndarray]) -> tuple[np.ndarray, np.ndarray, int]:
    """
    按输入顺序归约的均值与标准误

    Returns:
        (mean, stderr, count)；count = 1 时 stderr 为 0
    """
    stack = [np.asarray(s, dtype=float) for s in samples]
    count = len(stack)
    mean = pairwise_sum(stack) / count
    if count == 1:
        return mean, np.zeros_like(mean), 1
    squares = pairwise_sum([(s - mean) ** 2 for s in stack])
    stderr = np.sqrt(squares / (count - 1) / count)
    return mean, stderr, count


# 非实现类随机流的编号，与实现编号 0..R−1 不重叠
SCAFFOLD_STREAM = 1 << 40
OBSERVABLE_STREAM = SCAFFOLD_STREAM + 1
STAT_OPERATOR_STREAM = SCAFFOLD_STREAM + 2
PROBE_STREAM = SCAFFOLD_STREAM + 3
