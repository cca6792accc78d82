"""Chunked path-parallel map.

Work is split into contiguous chunks of path indices; every path draws from
its own RNG substream, so the merged result does not depend on the chunk size
or the number of workers.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

import numpy as np

from .config import DEFAULT_CHUNK_SIZE

T = TypeVar("T")

_settings = {"threads": 1, "chunk_size": DEFAULT_CHUNK_SIZE}


def configure(threads: Optional[int] = None, chunk_size: Optional[int] = None) -> None:
    """Set the worker cap and chunk size used by :func:`map_chunks`."""
    if threads is not None:
        _settings["threads"] = max(1, int(threads))
    if chunk_size is not None:
        _settings["chunk_size"] = max(1, int(chunk_size))


def chunk_ranges(n_items: int, chunk_size: int) -> List[range]:
    return [range(start, min(start + chunk_size, n_items)) for start in range(0, n_items, chunk_size)]


def map_chunks(fn: Callable[[range], T], n_items: int) -> List[T]:
    """Apply ``fn`` to consecutive index ranges covering ``range(n_items)``.

    Results come back in index order.
    """
    ranges = chunk_ranges(n_items, _settings["chunk_size"])
    threads = min(_settings["threads"], len(ranges))
    if threads <= 1:
        return [fn(r) for r in ranges]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, ranges))


def concat(parts: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate(list(parts), axis=0)
