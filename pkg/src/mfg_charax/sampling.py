"""Seeded Gaussian path increments and order-preserving parallel mapping.

Monte Carlo runs draw their Brownian increments once per Picard run through
a :class:`PathBatch` (common random numbers), in fixed-size chunks whose
content depends only on the seed and the chunk index.  Reductions over
chunks happen in chunk order, so results are bit-identical for any worker
count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

CHUNK_PATHS = 8192


@dataclass(frozen=True)
class PathBatch:
    """Pre-committed Brownian increments for ``n_paths`` paths.

    Increments have per-entry variance ``dt`` (the integrator step), shape
    ``(n_paths, n_steps, n_coords)``.  They are materialized lazily, chunk by
    chunk, from the seed; two batches with equal parameters produce equal
    arrays, which makes every fixed-point map using them deterministic.
    """

    n_paths: int
    n_steps: int
    n_coords: int
    dt: float
    seed: int

    def __post_init__(self):
        if self.n_paths < 1 or self.n_steps < 1 or self.n_coords < 1:
            raise ValueError("n_paths, n_steps and n_coords must be positive")
        if not np.isfinite(self.dt) or self.dt <= 0:
            raise ValueError("dt must be positive")

    def chunk(self, index):
        """Increments of chunk ``index`` (paths ``index*CHUNK_PATHS`` on)."""
        start = index * CHUNK_PATHS
        stop = min(start + CHUNK_PATHS, self.n_paths)
        if start >= stop:
            raise IndexError(index)
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(index,)))
        out = rng.standard_normal((stop - start, self.n_steps, self.n_coords))
        out *= np.sqrt(self.dt)
        return start, stop, out

    @property
    def n_chunks(self):
        return (self.n_paths + CHUNK_PATHS - 1) // CHUNK_PATHS

    def iter_chunks(self):
        for i in range(self.n_chunks):
            yield self.chunk(i)

    @property
    def increments(self):
        """Full increment array (materializes every chunk)."""
        out = np.empty((self.n_paths, self.n_steps, self.n_coords))
        for start, stop, arr in self.iter_chunks():
            out[start:stop] = arr
        return out


def ordered_map(fn, items, workers=1):
    """Map ``fn`` over ``items`` returning results in item order.

    With ``workers > 1`` the calls run on a thread pool (the heavy lifting
    is numpy, which releases the GIL); the output order, and therefore any
    subsequent reduction, is independent of the worker count.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
