"""
utility helpers for running per-client work in parallel
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

LOG = logging.getLogger("fedfeed.utils.distributed")


def resolve_workers(workers: Optional[int], num_items: int) -> int:
    if not workers or workers < 1:
        return 1
    return max(1, min(workers, num_items))


def map_clients(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> List[R]:
    """
    Run `fn` over `items` and return the results in input order.

    With workers > 1 the calls run on a thread pool. Results never depend on the
    worker count as long as `fn` owns its random stream and does not mutate shared
    state.
    """
    workers = resolve_workers(workers, len(items))
    if workers == 1:
        return [fn(item) for item in items]

    with ThreadPoolExecutor(
        max_workers=workers, thread_name_prefix="client"
    ) as executor:
        return list(executor.map(fn, items))
