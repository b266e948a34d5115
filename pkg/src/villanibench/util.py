"""Small shared helpers: deterministic parallel mapping and RNG streams."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

__all__ = ["parallel_map", "stream_rng"]


def parallel_map(fn, items, threads: int = 1) -> list:
    """Map fn over items, optionally with a thread pool.

    Results are returned in input order, so reductions over them are
    bit-stable regardless of scheduling; with threads <= 1 this is a plain
    loop.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def stream_rng(*key) -> np.random.Generator:
    """Independent counter-based RNG stream keyed by integers, e.g. (seed, index).

    Streams do not depend on draw order elsewhere, so work split across
    threads reproduces the single-threaded result.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))
