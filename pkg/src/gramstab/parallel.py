"""Thread-pool helper honouring ``GRAMSTAB_THREADS``."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def thread_count():
    """Worker cap from ``GRAMSTAB_THREADS`` (default 1, invalid values mean 1)."""
    try:
        return max(1, int(os.environ.get("GRAMSTAB_THREADS", "1")))
    except ValueError:
        return 1


def ordered_map(fn, items):
    """``[fn(x) for x in items]``, possibly in parallel; output order is input order."""
    items = list(items)
    workers = min(thread_count(), max(1, len(items)))
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
