"""Seedable random streams and order-preserving parallel fan-out.

Every stochastic routine in the package takes a :class:`RandomStream`
explicitly. The generator is numpy's PCG64 seeded through ``SeedSequence``;
child streams are derived by extending the seed sequence's spawn key with an
index, so ``stream.child(i)`` depends only on the master seed and the path of
indices, never on how many children were drawn before or on thread count.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

__all__ = ["RandomStream", "worker_count", "ordered_map", "CHUNK_SIZE", "chunk_bounds"]

T = TypeVar("T")

CHUNK_SIZE = 1 << 16
"""Rounds simulated per derived stream. Fixed so output never depends on workers."""

_MASK64 = (1 << 64) - 1


class RandomStream:
    """Deterministic PCG64 stream addressed by ``(seed, *path)``.

    A stream is single-owner. Parallel code must use :meth:`child` rather than
    sharing one instance between threads.
    """

    def __init__(self, seed: int = 0, path: Sequence[int] = ()):
        if not 0 <= int(seed) <= _MASK64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, path={self.path})"

    def child(self, index: int) -> "RandomStream":
        """Independent stream for ``index``; a pure function of seed and path."""
        return RandomStream(self.seed, self.path + (int(index),))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def random(self, size=None):
        """Uniform reals in [0, 1)."""
        return self._gen.random(size)

    def uniform(self, low: float, high: float, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def bits(self, size=None):
        return self._gen.integers(0, 2, size=size, dtype=np.uint8)

    def binomial(self, n, p, size=None):
        return self._gen.binomial(n, p, size)

    def poisson(self, lam, size=None):
        return self._gen.poisson(lam, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def worker_count() -> int:
    """Worker threads, capped by ``POLARQKD_THREADS``. Never affects output."""
    env = os.environ.get("POLARQKD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def ordered_map(fn: Callable[..., T], items: Iterable, workers: int | None = None) -> list[T]:
    """``map`` over a thread pool, results in input order."""
    items = list(items)
    workers = worker_count() if workers is None else max(1, workers)
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def chunk_bounds(total: int, size: int = CHUNK_SIZE) -> list[tuple[int, int, int]]:
    """``(chunk_index, start, stop)`` triples covering ``range(total)``."""
    return [(i, s, min(s + size, total)) for i, s in enumerate(range(0, total, size))]
