"""Logging setup and stage timing.

This module provides:
- A run-id log filter so every record carries the id of the CLI run
- A one-shot logging configuration matching the run-id format
- A timing context manager that logs stage start/finish with durations
"""

import logging
import time
import uuid
from contextlib import contextmanager
from typing import Dict, Iterator, Optional

from rankval.config import settings

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - [%(run_id)s] - %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'

logger = logging.getLogger(__name__)

_current_run_id = "no-run-id"


class RunIdFilter(logging.Filter):
  """Add the current run id to all log records."""

  def filter(self, record):
    """Add run_id to log record if not present."""
    if not hasattr(record, 'run_id'):
      record.run_id = _current_run_id
    return True


def new_run_id() -> str:
  """Generate a run id and make it the default for subsequent records."""
  global _current_run_id
  _current_run_id = str(uuid.uuid4())
  return _current_run_id


def get_run_id() -> str:
  """Return the run id currently stamped onto log records."""
  return _current_run_id


def configure_logging(level: Optional[str] = None) -> None:
  """Install the root handler with the run-id format.

  Safe to call more than once; the filter is attached to each root handler
  only once.

  Args:
    level: Logging level name; defaults to settings.LOG_LEVEL
  """
  level_name = (level or settings.LOG_LEVEL).upper()
  logging.basicConfig(
    level=getattr(logging, level_name, logging.INFO),
    format=LOG_FORMAT,
    datefmt=LOG_DATEFMT,
  )
  logging.getLogger().setLevel(getattr(logging, level_name, logging.INFO))
  for handler in logging.root.handlers:
    if not any(isinstance(f, RunIdFilter) for f in handler.filters):
      handler.addFilter(RunIdFilter())


@contextmanager
def timed_stage(name: str, timings: Optional[Dict[str, float]] = None) -> Iterator[None]:
  """Log the start, end and duration of a pipeline stage.

  Args:
    name: Stage name (e.g. "fit", "v_matrix", "lambda", "solve")
    timings: Optional dict receiving ``{name: duration_ms}``

  Examples:
    >>> timings = {}
    >>> with timed_stage("fit", timings):
    ...   pass
    >>> "fit" in timings
    True
  """
  start_time = time.perf_counter()
  logger.info(f"Stage started: {name}", extra={"run_id": _current_run_id, "stage": name})
  try:
    yield
  except Exception as e:
    duration = time.perf_counter() - start_time
    logger.error(
      f"Stage failed: {name}",
      extra={
        "run_id": _current_run_id,
        "stage": name,
        "duration_ms": round(duration * 1000, 2),
        "error": str(e),
      },
      exc_info=True,
    )
    raise

  duration_ms = round((time.perf_counter() - start_time) * 1000, 2)
  if timings is not None:
    timings[name] = duration_ms
  logger.info(
    f"Stage completed: {name} ({duration_ms} ms)",
    extra={"run_id": _current_run_id, "stage": name, "duration_ms": duration_ms},
  )
