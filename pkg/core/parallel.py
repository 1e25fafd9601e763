"""
粒子级并行工具
按粒子下标切块交给线程池，结果按切块顺序返回
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")


def resolve_threads(threads: Optional[int]) -> int:
    """None 表示使用机器可用核数"""
    if threads is None:
        return os.cpu_count() or 1
    if isinstance(threads, bool) or not isinstance(threads, int) or threads < 1:
        raise ValueError(f"threads 必须是正整数, 实际为 {threads!r}")
    return threads


def chunk_slices(n: int, parts: int) -> List[slice]:
    """把 [0, n) 均分成至多 parts 个连续切片"""
    parts = max(1, min(parts, n))
    bounds = [(i * n) // parts for i in range(parts + 1)]
    return [slice(bounds[i], bounds[i + 1]) for i in range(parts)]


def map_chunks(fn: Callable[[slice], T], n: int, threads: int = 1) -> List[T]:
    """
    对每个切片调用 fn，结果列表按下标顺序排列

    Args:
        fn: 接收 slice 的函数，必须只读共享数据
        n: 元素总数
        threads: 线程数，1 时在当前线程顺序执行

    Returns:
        各切片结果
    """
    if threads <= 1 or n < 2:
        return [fn(slice(0, n))]
    slices = chunk_slices(n, threads)
    with ThreadPoolExecutor(max_workers=len(slices)) as pool:
        return list(pool.map(fn, slices))
