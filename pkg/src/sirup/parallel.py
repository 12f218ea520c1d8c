"""Scene-level parallel map with deterministic result order."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def ordered_map(fn, items, workers: int = 1) -> list:
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
