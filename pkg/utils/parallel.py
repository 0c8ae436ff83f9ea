"""
Worker pool for per-phase work
"""
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from typing import Iterator, Optional


@contextmanager
def phase_executor(threads: int) -> Iterator[Optional[ThreadPoolExecutor]]:
    """Thread pool for per-phase updates, or None for single-threaded runs

    Args:
        threads: Worker count from the run config; 1 disables the pool

    Yields:
        An executor, or None when threads <= 1
    """
    if threads <= 1:
        yield None
        return
    with ThreadPoolExecutor(max_workers=threads, thread_name_prefix='petto-phase') as pool:
        yield pool
