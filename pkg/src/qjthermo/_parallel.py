"""Seeded fan-out of Monte Carlo work across worker threads.

Each worker gets its own Philox (counter-based) stream spawned from one
SeedSequence, and a fixed share of the samples. Results are therefore a pure
function of (seed, workers) regardless of scheduling.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np


def split_counts(n, workers):
    base, extra = divmod(n, workers)
    return [base + (1 if i < extra else 0) for i in range(workers)]


def spawn_generators(seed, workers):
    children = np.random.SeedSequence(seed).spawn(workers)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def run_chunks(fn, n, seed, workers=1):
    """Call ``fn(rng, n_chunk)`` once per worker and return the results in worker order."""
    if workers < 1:
        raise ValueError("workers must be >= 1")
    sizes = split_counts(n, workers)
    rngs = spawn_generators(seed, workers)
    if workers == 1:
        return [fn(rngs[0], sizes[0])]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, rngs, sizes))
