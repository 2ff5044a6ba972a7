"""Replica work pool with results independent of the worker count."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

from ..rng import RngStream

T = TypeVar("T")

DEFAULT_CHUNK = 256


def chunks(rng: RngStream, size: int = DEFAULT_CHUNK) -> list[RngStream]:
    """Split a replica stream into fixed-size pieces (never depends on thread count)."""
    n = len(rng)
    return [rng.subset(slice(i, min(i + size, n))) for i in range(0, n, size)]


def map_replicas(fn: Callable[[RngStream], T], rng: RngStream, threads: int = 1, size: int = DEFAULT_CHUNK) -> list[T]:
    """Apply ``fn`` to each chunk of replicas, in replica order."""
    parts = chunks(rng, size)
    if threads <= 1 or len(parts) == 1:
        return [fn(p) for p in parts]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, parts))


def concat(parts, axis: int = 0):
    return np.concatenate(parts, axis=axis)
