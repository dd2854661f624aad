"""Worker-pool helpers for per-client and per-shard training tasks.

Tasks are independent and seeded by stable context keys, so results do not
depend on scheduling order. `GOLDFISH_THREADS` caps the pool size; 1 runs
everything inline.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    env = os.environ.get("GOLDFISH_THREADS", "")
    if env.strip():
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"GOLDFISH_THREADS must be an integer, got {env!r}")
        return max(1, n)
    return min(4, os.cpu_count() or 1)


def run_indexed(fn, args_list):
    """Apply fn to each argument tuple, preserving input order in the result."""
    workers = worker_count()
    if workers == 1 or len(args_list) <= 1:
        return [fn(*args) for args in args_list]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, *args) for args in args_list]
        return [f.result() for f in futures]
