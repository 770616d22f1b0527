"""Splittable seeding and ordered parallel replication."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

import numpy as np

T = TypeVar("T")

THREADS_ENV = "CHAINING_LAB_THREADS"


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def spawn_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """One independent generator per replication.

    Children of a fresh ``SeedSequence`` are indexed by position, so the first
    ``k`` generators are the same whatever ``count`` is.
    """
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.default_rng(c) for c in children]


def replicate(fn: Callable[[np.random.Generator], T], seed: int, reps: int) -> list[T]:
    """Run ``fn`` once per replication generator, results in replication order."""
    rngs = spawn_rngs(seed, reps)
    workers = thread_count()
    if workers == 1 or reps < 2:
        return [fn(rng) for rng in rngs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, rngs))
