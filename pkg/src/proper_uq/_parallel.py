"""Thread-count configuration and an order-preserving parallel map.

Work is always split into the same blocks regardless of the worker count and
results are reduced in block order, so outputs do not depend on threading.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")

ENV_VAR = "PROPER_UQ_THREADS"
_threads: int | None = None


def get_threads() -> int:
    if _threads is not None:
        return _threads
    env = os.environ.get(ENV_VAR)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"{ENV_VAR} must be a positive integer, got {env!r}") from None
        if n >= 1:
            return n
    return os.cpu_count() or 1


def set_threads(n: int | None) -> None:
    """Cap worker threads; ``None`` restores the environment/default."""
    global _threads
    if n is not None and int(n) < 1:
        raise ValueError("thread count must be >= 1")
    _threads = None if n is None else int(n)


def pmap(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    items = list(items)
    n = min(get_threads(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def row_blocks(n: int, size: int = 256) -> list[slice]:
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]
