"""Fixed-block path parallelism.

Paths are split into blocks of a fixed size that does not depend on the
worker count; results come back in block order.  Together with per-path
random streams this makes every estimator a pure function of
``(config, seed, block_size)``.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

DEFAULT_BLOCK = 500


def blocks(n_paths: int, block_size: int = DEFAULT_BLOCK) -> list[tuple[int, int]]:
    if n_paths < 1:
        raise ValueError("need at least one path")
    if block_size < 1:
        raise ValueError("block_size must be positive")
    return [(s, min(block_size, n_paths - s)) for s in range(0, n_paths, block_size)]


def map_blocks(fn, n_paths: int, block_size: int = DEFAULT_BLOCK, n_workers: int = 1) -> list:
    """Apply ``fn(start, count)`` to every block, preserving block order."""
    spans = blocks(n_paths, block_size)
    if n_workers <= 1 or len(spans) == 1:
        return [fn(s, c) for s, c in spans]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        futures = [pool.submit(fn, s, c) for s, c in spans]
        return [f.result() for f in futures]
