"""Thread-pool handle passed from the command line into library drivers.

Library functions take ``pool=None`` (run inline) or any object with an
ordered ``map``; they never start workers themselves.  The compiled
kernels release the GIL, so threads give real speedups on the chart work.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager


def default_threads() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def pmap(fn, items, pool=None) -> list:
    """``[fn(x) for x in items]`` in input order, optionally on ``pool``."""
    if pool is None:
        return [fn(x) for x in items]
    return list(pool.map(fn, items))


@contextmanager
def thread_pool(threads: int | None):
    """``None`` for a single thread, otherwise a ThreadPoolExecutor."""
    n = default_threads() if threads is None else threads
    if n <= 1:
        yield None
        return
    with ThreadPoolExecutor(max_workers=n) as ex:
        yield ex
