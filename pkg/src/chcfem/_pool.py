"""Ordered parallel map over sample indices."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")


def resolve_threads(threads: int | None) -> int:
    """``threads`` if given, else ``CHC_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get("CHC_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError(f"thread count must be positive, got {threads}")
    return threads


def ordered_map(fn: Callable[[int], T], indices: Iterable[int], threads: int | None = None) -> list[T]:
    """``[fn(i) for i in indices]`` evaluated on a thread pool, results in input order.

    The trajectory kernels release the GIL, so threads give real concurrency.
    Callers reduce the returned list sequentially, which keeps aggregates
    independent of the thread count.
    """
    indices = list(indices)
    n = resolve_threads(threads)
    if n == 1 or len(indices) < 2:
        return [fn(i) for i in indices]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, indices))
