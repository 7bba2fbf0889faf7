"""Utility functions shared across rankval."""

import hashlib
import json
from typing import Any, Mapping, Sequence

import numpy as np


def sha256_hex(payload: bytes) -> str:
  """Return the hex sha256 digest of a byte string."""
  return hashlib.sha256(payload).hexdigest()


def config_hash(config: Mapping[str, Any]) -> str:
  """Hash a JSON-compatible config mapping deterministically.

  Keys are sorted so that logically equal configs hash identically.

  Args:
    config: Mapping of config fields

  Returns:
    First 16 hex characters of the sha256 digest

  Examples:
    >>> config_hash({"b": 1, "a": 2}) == config_hash({"a": 2, "b": 1})
    True
  """
  canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
  return sha256_hex(canonical.encode("utf-8"))[:16]


def deterministic_ranks(values: np.ndarray, ids: Sequence[str], larger_is_better: bool) -> np.ndarray:
  """Convert a ranking variable into integer ranks 1..N.

  Ties are broken by unit id in lexicographic order. NaN values rank last.

  Args:
    values: Ranking variable per unit
    ids: Unit ids aligned with values
    larger_is_better: Orientation of the ranking variable

  Returns:
    Integer array where 1 marks the top unit

  Examples:
    >>> deterministic_ranks(np.array([0.2, 0.1, 0.2]), ["b", "c", "a"], larger_is_better=False).tolist()
    [3, 1, 2]
  """
  keyed = np.asarray(values, dtype=float)
  if larger_is_better:
    keyed = -keyed
  keyed = np.where(np.isnan(keyed), np.inf, keyed)
  id_order = np.argsort(np.asarray(ids, dtype=str), kind="stable")
  id_rank = np.empty(len(id_order), dtype=np.int64)
  id_rank[id_order] = np.arange(len(id_order))
  order = np.lexsort((id_rank, keyed))
  ranks = np.empty(len(order), dtype=np.int64)
  ranks[order] = np.arange(1, len(order) + 1)
  return ranks


def relative_rank_shift(other_rank: np.ndarray, rvalue_rank: np.ndarray) -> np.ndarray:
  """Return (X - R) / (X + R) comparing a method's ranks X with r-value ranks R."""
  x = np.asarray(other_rank, dtype=float)
  r = np.asarray(rvalue_rank, dtype=float)
  return (x - r) / (x + r)
