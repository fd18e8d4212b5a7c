"""
Worker parallelism capped by the HQDM_THREADS environment variable
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, TypeVar

from ..constants import THREADS_ENV
from ..errors import ValidationError

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def thread_limit() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise ValidationError(f"{THREADS_ENV} must be a positive integer, got '{raw}'")
    if value < 1:
        raise ValidationError(f"{THREADS_ENV} must be a positive integer, got {value}")
    return value


def parallel_map(fn: Callable[[T], R], items: Sequence[T]) -> List[R]:
    """Map in order; results are returned in input order regardless of worker count"""
    workers = min(thread_limit(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    logger.debug(f"Running {len(items)} tasks on {workers} threads")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
