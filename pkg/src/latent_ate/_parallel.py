"""Ordered map over independent tasks, optionally in worker processes."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

THREADS_ENV = "LATENT_ATE_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def map_ordered(fn, tasks, threads: int | None = None) -> list:
    """``[fn(t) for t in tasks]``; results always come back in task order.

    With ``threads > 1`` tasks run in a process pool, so ``fn`` and each task
    must be picklable. Exceptions propagate from the first failing task.
    """
    tasks = list(tasks)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(tasks) < 2:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
