import concurrent.futures as cf
from typing import Callable, Iterable, List, Optional, TypeVar

from app.core.config import LAB_THREADS

T = TypeVar("T")
R = TypeVar("R")


def run_ordered(fn: Callable[[T], R], items: Iterable[T], max_workers: Optional[int] = None) -> List[R]:
    """Map fn over items on a thread pool, results in submission order.

    Exceptions propagate from the first failing item in order.
    """
    items = list(items)
    workers = max(1, min(max_workers or LAB_THREADS, len(items) or 1))
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with cf.ThreadPoolExecutor(max_workers=workers) as ex:
        futures = [ex.submit(fn, it) for it in items]
        return [fut.result() for fut in futures]
