"""Worker-count invariant block scheduling.

Work is cut into blocks whose boundaries depend only on the problem size,
never on the number of workers; workers just pick up whole blocks. Every
block is therefore computed by exactly the same numpy/BLAS calls whatever the
worker count, and results are reassembled in block order.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

ENV_WORKERS = "PATHWEAVER_WORKERS"
# rows of f-evaluations per block; large enough to amortise Python overhead
BLOCK_ROWS = 1 << 15


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(ENV_WORKERS, "1") or 1)
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    return workers


def sample_blocks(n_samples: int, rows_per_sample: int, block_rows: int = BLOCK_ROWS):
    """Split ``range(n_samples)`` into contiguous ranges of about ``block_rows`` rows."""
    per_block = max(1, block_rows // max(1, rows_per_sample))
    return [range(s, min(s + per_block, n_samples)) for s in range(0, n_samples, per_block)]


def map_blocks(fn, blocks, workers: int | None = None) -> list:
    workers = resolve_workers(workers)
    if workers == 1 or len(blocks) <= 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=min(workers, len(blocks))) as pool:
        return list(pool.map(fn, blocks))
