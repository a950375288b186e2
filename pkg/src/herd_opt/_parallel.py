"""Thread-count policy and an order-preserving parallel map."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

from .errors import InvalidArgumentError

ENV_THREADS = "HERD_OPT_THREADS"

T = TypeVar("T")
U = TypeVar("U")


def thread_count(requested: int | None = None) -> int:
    """Worker count: ``requested`` if given, else HERD_OPT_THREADS, else the CPU count.

    HERD_OPT_THREADS is a cap on the result either way.
    """
    cap = None
    raw = os.environ.get(ENV_THREADS, "").strip()
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            raise InvalidArgumentError(f"{ENV_THREADS} must be a positive integer, got {raw!r}") from None
        if cap < 1:
            raise InvalidArgumentError(f"{ENV_THREADS} must be a positive integer, got {raw!r}")
    n = requested if requested is not None else (cap or os.cpu_count() or 1)
    if n < 1:
        raise InvalidArgumentError(f"thread count must be positive, got {n}")
    return min(n, cap) if cap else n


def ordered_map(fn: Callable[[T], U], items: Iterable[T], threads: int | None = None) -> list[U]:
    """``[fn(x) for x in items]``, evaluated concurrently; results keep input order."""
    items = list(items)
    n = min(thread_count(threads), max(1, len(items)))
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
