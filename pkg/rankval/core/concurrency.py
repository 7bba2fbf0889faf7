"""Thread-pool helpers for per-unit block computations.

numpy and scipy release the GIL inside their kernels, so splitting the unit
axis into contiguous blocks and running them on a ThreadPoolExecutor gives
real parallelism. Results are reassembled in block order, which keeps every
output independent of the thread schedule.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, Tuple, TypeVar

from rankval.config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")

MIN_BLOCK_SIZE = 2048


def block_bounds(n_items: int, n_blocks: int) -> List[Tuple[int, int]]:
  """Split ``range(n_items)`` into at most ``n_blocks`` contiguous slices.

  Args:
    n_items: Total number of items
    n_blocks: Requested number of blocks (clamped to [1, n_items])

  Returns:
    List of (start, stop) pairs covering the range in order

  Examples:
    >>> block_bounds(10, 3)
    [(0, 4), (4, 7), (7, 10)]
  """
  if n_items <= 0:
    return []
  n_blocks = max(1, min(n_blocks, n_items))
  base, extra = divmod(n_items, n_blocks)
  bounds = []
  start = 0
  for block in range(n_blocks):
    stop = start + base + (1 if block < extra else 0)
    bounds.append((start, stop))
    start = stop
  return bounds


def resolve_workers(max_workers: Optional[int] = None) -> int:
  """Return the worker count, capped by RANKVAL_THREADS."""
  requested = max_workers if max_workers is not None else settings.RANKVAL_THREADS
  return max(1, min(int(requested), settings.RANKVAL_THREADS))


def map_blocks(
  func: Callable[[int, int], T],
  n_items: int,
  max_workers: Optional[int] = None,
  min_block: int = MIN_BLOCK_SIZE,
) -> List[T]:
  """Apply ``func(start, stop)`` to contiguous blocks, possibly in parallel.

  Small inputs run inline on the calling thread.

  Args:
    func: Callable receiving block bounds and returning that block's result
    n_items: Number of items along the split axis
    max_workers: Optional worker cap (never above RANKVAL_THREADS)
    min_block: Minimum items per block before a pool is used

  Returns:
    Block results in block order
  """
  workers = resolve_workers(max_workers)
  n_blocks = min(workers, max(1, n_items // max(1, min_block)))
  bounds = block_bounds(n_items, n_blocks)
  if len(bounds) <= 1:
    return [func(start, stop) for start, stop in bounds]

  logger.debug(f"Running {len(bounds)} blocks on {workers} threads", extra={"n_items": n_items})
  with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="rankval-worker") as executor:
    futures = [executor.submit(func, start, stop) for start, stop in bounds]
    return [future.result() for future in futures]


def map_items(func: Callable[[T], object], items: Sequence[T], max_workers: Optional[int] = None) -> list:
  """Apply ``func`` to each item on the pool, preserving input order."""
  workers = resolve_workers(max_workers)
  if workers <= 1 or len(items) <= 1:
    return [func(item) for item in items]
  with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="rankval-worker") as executor:
    return list(executor.map(func, items))
