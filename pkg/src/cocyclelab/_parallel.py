"""Deterministic data-parallel sweeps.

Work splits into a fixed number of chunks independent of the thread count and
results combine in chunk order, so outputs are bitwise identical for any
--threads value; workers only ever run disjoint numpy slices.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable

import numpy as np

FIXED_CHUNKS = 64


def parallel_lanes(fn: Callable[[np.ndarray], np.ndarray], xs: np.ndarray,
                   threads: int = 1) -> np.ndarray:
    """Apply fn to fixed slices of xs and concatenate in slice order."""
    xs = np.asarray(xs)
    n_chunks = min(FIXED_CHUNKS, max(1, xs.shape[0]))
    bounds = np.linspace(0, xs.shape[0], n_chunks + 1).astype(int)
    slices = [xs[bounds[i]:bounds[i + 1]] for i in range(n_chunks) if bounds[i] < bounds[i + 1]]
    if threads <= 1:
        parts = [fn(s) for s in slices]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, slices))
    return np.concatenate(parts)
