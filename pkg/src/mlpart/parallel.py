"""Worker pool shared by all parallel phases.

Workers are plain threads. The heavy lifting happens in numba kernels
compiled with ``nogil=True``, so threads overlap inside the kernels.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

_pools: dict[int, ThreadPoolExecutor] = {}
_lock = threading.Lock()


def get_pool(workers: int) -> ThreadPoolExecutor:
    with _lock:
        pool = _pools.get(workers)
        if pool is None:
            pool = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="mlpart")
            _pools[workers] = pool
        return pool


def run_parallel(fn: Callable, args_per_worker: Sequence[tuple]) -> list:
    """Run ``fn(*args)`` once per entry, concurrently; results in input order.

    A single entry runs inline on the calling thread (deterministic mode).
    """
    if len(args_per_worker) == 1:
        return [fn(*args_per_worker[0])]
    pool = get_pool(len(args_per_worker))
    futures = [pool.submit(fn, *args) for args in args_per_worker]
    return [f.result() for f in futures]


def split_range(begin: int, end: int, parts: int) -> list[tuple[int, int]]:
    """Split ``[begin, end)`` into ``parts`` contiguous, nearly equal ranges."""
    size = end - begin
    bounds = [begin + size * i // parts for i in range(parts + 1)]
    return [(bounds[i], bounds[i + 1]) for i in range(parts)]
