"""Order-preserving thread map capped by the CRITNET_THREADS environment variable."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Optional, TypeVar

T = TypeVar("T")
U = TypeVar("U")


def worker_count(requested: Optional[int] = None) -> int:
    env = os.environ.get("CRITNET_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            pass
    if requested is None:
        return cap
    return max(1, min(int(requested), cap))


def map_threads(fn: Callable[[T], U], items: Iterable[T], threads: Optional[int] = None) -> list[U]:
    """``list(map(fn, items))`` evaluated on a thread pool; results keep input order."""
    items = list(items)
    n = worker_count(threads)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
