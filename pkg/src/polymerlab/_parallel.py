"""Deterministic seed-blocked process pool.

Scans distribute disorder replicas over workers in fixed-size blocks indexed
by seed range. Per-block results come back ordered by block index and are
reduced with numpy's pairwise summation, so the output is bit-identical for
any worker count, including 1.
"""

import multiprocessing
import os


def resolve_workers(workers=None):
    if workers in (None, 0):
        return max(1, os.cpu_count() or 1)
    return max(1, int(workers))


def blocked_map(worker, n_tasks, payload, block_size=64, workers=None):
    """Run ``worker(lo, hi, payload)`` over [0, n_tasks) split into blocks.

    Returns the list of per-block results in block order. ``worker`` must be a
    module-level function (it crosses a fork boundary when workers > 1).
    """
    n_tasks = int(n_tasks)
    block_size = max(1, int(block_size))
    blocks = [(lo, min(lo + block_size, n_tasks))
              for lo in range(0, n_tasks, block_size)]
    workers = resolve_workers(workers)
    if workers <= 1 or len(blocks) <= 1:
        return [worker(lo, hi, payload) for lo, hi in blocks]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(min(workers, len(blocks))) as pool:
        return pool.starmap(worker, [(lo, hi, payload) for lo, hi in blocks],
                            chunksize=1)
