"""Deterministic worker pool.

Work is always split into units whose boundaries do not depend on the
worker count; results come back in submission order and reductions run in
that order, so outputs are bitwise identical for any number of workers.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, Iterable, List, Optional, TypeVar

import numpy as np

from volfit.core.config import resolve_threads

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def map_ordered(fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """Apply fn to every item, returning results in input order"""
    items = list(items)
    workers = min(resolve_threads(threads), max(1, len(items)))
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def sum_ordered(buffers: List[Dict[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    """Reduce per-unit gradient buffers in fixed list order"""
    total: Dict[str, np.ndarray] = {}
    for buffer in buffers:
        for name, value in buffer.items():
            if name in total:
                total[name] = total[name] + value
            else:
                total[name] = np.array(value, copy=True)
    return total
