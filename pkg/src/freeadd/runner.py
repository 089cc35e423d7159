"""Seeded, order-independent parallel evaluation."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence

import numpy as np

__all__ = ["sample_rng", "chunk_ranges", "parallel_map", "resolve_workers"]


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Generator for sample ``index`` of a run seeded with ``seed``.

    Streams come from ``SeedSequence(seed, spawn_key=(index,))`` so any sample
    can be regenerated in isolation and worker count never matters.
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def chunk_ranges(n: int, n_chunks: int):
    n_chunks = max(1, min(n_chunks, n)) if n > 0 else 1
    edges = np.linspace(0, n, n_chunks + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def resolve_workers(workers) -> int:
    if workers is None or workers <= 0:
        return os.cpu_count() or 1
    return int(workers)


def parallel_map(fn: Callable, tasks: Sequence, workers: int = 1) -> list:
    """``[fn(*t) for t in tasks]``, optionally in a process pool.

    Results come back in task order.
    """
    workers = resolve_workers(workers)
    if workers == 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *t) for t in tasks]
        return [f.result() for f in futures]
