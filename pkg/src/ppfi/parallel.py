"""Ordered data-parallel map over index ranges.

Work is split into contiguous chunks whose results are concatenated in
index order, so the output never depends on the worker count. Workers
are forked; the task callable is handed over through a module global so
only (start, stop) pairs cross the process boundary.
"""

from __future__ import annotations

import multiprocessing as mp
import os
from typing import Callable, Sequence

_TASK: Callable | None = None


def _run_chunk(bounds):
    start, stop = bounds
    return _TASK(start, stop)


def chunk_bounds(n: int, chunk: int) -> list:
    return [(i, min(i + chunk, n)) for i in range(0, n, chunk)]


def map_ranges(task: Callable[[int, int], Sequence], n: int, threads: int = 1, chunk: int = 2048) -> list:
    """Evaluate ``task(start, stop)`` over [0, n) and concatenate in order.

    ``task`` must return a sequence with one entry per index.
    """
    global _TASK
    bounds = chunk_bounds(n, chunk)
    threads = max(1, int(threads))
    if threads == 1 or len(bounds) == 1 or "fork" not in mp.get_all_start_methods():
        parts = [task(a, b) for a, b in bounds]
    else:
        _TASK = task
        try:
            with mp.get_context("fork").Pool(min(threads, len(bounds), os.cpu_count() * 4 or 1)) as pool:
                parts = pool.map(_run_chunk, bounds, chunksize=1)
        finally:
            _TASK = None
    out = []
    for p in parts:
        out.extend(p)
    return out
