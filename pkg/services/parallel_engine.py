# services/parallel_engine.py
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Sequence

logger = logging.getLogger(__name__)


def execute_parallel_jobs(keys: Sequence[Any],
                          job_func: Callable,
                          workers: int = 1,
                          *args, **kwargs) -> List[Any]:
    """
    Generic job-in/result-out engine for independent permutation columns.

    Results come back in the order of `keys`, whatever order the workers
    finish in. A failing job re-raises after the pool drains.
    """
    keys = list(keys)
    if workers <= 1 or len(keys) <= 1:
        return [job_func(key, *args, **kwargs) for key in keys]

    results: Dict[int, Any] = {}
    with ThreadPoolExecutor(max_workers=min(workers, len(keys))) as executor:
        future_map = {
            executor.submit(job_func, key, *args, **kwargs): pos
            for pos, key in enumerate(keys)
        }
        first_error = None
        for future, pos in future_map.items():
            try:
                results[pos] = future.result()
            except Exception as e:
                logger.error(f"Parallel job failed for {keys[pos]!r}: {e}")
                if first_error is None:
                    first_error = e
        if first_error is not None:
            raise first_error

    return [results[pos] for pos in range(len(keys))]


def chunked(items: Sequence[int], size: int) -> List[List[int]]:
    """Split trial indices into contiguous chunks of at most `size`."""
    size = max(1, int(size))
    items = list(items)
    return [items[i:i + size] for i in range(0, len(items), size)]
