"""Optional thread-pool fan-out for grid scans.

PREFTRANS_THREADS caps scan parallelism; the default of 1 keeps every scan
serial and deterministic. Reductions used by the scans (min/max merges) are
associative, so results do not depend on the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def thread_count() -> int:
    raw = os.environ.get("PREFTRANS_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def parallel_map(fn, items):
    """Map fn over items, preserving order; threaded when allowed."""
    items = list(items)
    n = thread_count()
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))
