"""Order-preserving parallel map over independent, self-seeded jobs."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("CDT_THREADS", "1")))
    except ValueError:
        return 1


def pmap(fn, items, threads: int | None = None) -> list:
    """``[fn(x) for x in items]``, run on up to ``threads`` worker threads.

    Results come back in input order; callers derive each job's seed from
    its index, so output does not depend on the thread count.
    """
    items = list(items)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
