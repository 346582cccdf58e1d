"""Deterministic chunked execution.

Work is always split into the same fixed-size chunks regardless of the worker
count, so numerical results never depend on how many threads ran them.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

CHUNK = 2048


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        threads = int(os.environ.get("REGIMESCAN_THREADS", "1") or 1)
    return max(1, int(threads))


def chunk_slices(total: int, size: int = CHUNK) -> list[slice]:
    return [slice(a, min(a + size, total)) for a in range(0, total, size)]


def map_chunks(fn, total: int, threads: int | None = 1, size: int = CHUNK) -> list:
    """Apply ``fn(slice)`` over fixed chunks of ``range(total)``; results in order."""
    threads = resolve_threads(threads)
    slices = chunk_slices(total, size)
    if threads <= 1 or len(slices) <= 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, slices))
