"""Unit payloads and validated datasets.

Key types:
- NormalObs / BinomialObs / PosteriorDraws: the three payload kinds
- UnitRecord: one labelled unit
- Dataset: a validated, homogeneous, column-oriented collection of units

``validate_dataset`` is the only way to build a Dataset from records; it
aggregates per-unit violations into a single InvalidUnitError.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from rankval.config import settings
from rankval.core.exceptions import (
  EmptyDatasetError,
  InvalidUnitError,
  MixedPayloadKindsError,
)
from rankval.core.utils import sha256_hex

logger = logging.getLogger(__name__)


class PayloadKind(str, Enum):
  """Payload kind shared by every unit of a dataset."""

  NORMAL = "normal"
  BINOMIAL = "binomial"
  DRAWS = "draws"


class NormalObs(BaseModel):
  """Measurement x with known sampling variance sigma2."""

  model_config = ConfigDict(frozen=True)

  kind: Literal["normal"] = "normal"
  x: float = Field(..., allow_inf_nan=False, description="Measurement")
  sigma2: float = Field(..., gt=0, allow_inf_nan=False, description="Sampling variance")


class BinomialObs(BaseModel):
  """Success count y out of n trials."""

  model_config = ConfigDict(frozen=True)

  kind: Literal["binomial"] = "binomial"
  y: int = Field(..., ge=0, description="Successes")
  n: int = Field(..., ge=1, description="Trials")

  @model_validator(mode="after")
  def validate_successes(self) -> "BinomialObs":
    """Reject more successes than trials."""
    if self.y > self.n:
      raise ValueError(f"y={self.y} exceeds n={self.n}")
    return self


class PosteriorDraws(BaseModel):
  """Externally supplied posterior draws of one unit's parameter."""

  model_config = ConfigDict(frozen=True)

  kind: Literal["draws"] = "draws"
  draws: Tuple[float, ...] = Field(..., min_length=1)

  @field_validator("draws")
  @classmethod
  def validate_finite(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
    """Require every draw to be finite."""
    if not np.all(np.isfinite(np.asarray(v, dtype=float))):
      raise ValueError("draws must all be finite")
    return v


Payload = Union[NormalObs, BinomialObs, PosteriorDraws]


class UnitRecord(BaseModel):
  """One unit: an id plus its payload."""

  model_config = ConfigDict(frozen=True)

  id: str = Field(..., min_length=1)
  payload: Payload = Field(..., discriminator="kind")

  @field_validator("id")
  @classmethod
  def strip_id(cls, v: str) -> str:
    """Trim surrounding whitespace from ids."""
    v = v.strip()
    if not v:
      raise ValueError("id cannot be empty")
    return v


def _readonly(values: np.ndarray) -> np.ndarray:
  values.setflags(write=False)
  return values


@dataclass(frozen=True)
class Dataset:
  """Validated homogeneous dataset in column form.

  Only the columns of the dataset's kind are populated. Arrays are
  read-only; draws are stored sorted ascending per unit.
  """

  kind: PayloadKind
  ids: Tuple[str, ...]
  x: Optional[np.ndarray] = None
  sigma2: Optional[np.ndarray] = None
  y: Optional[np.ndarray] = None
  n: Optional[np.ndarray] = None
  draws: Optional[Tuple[np.ndarray, ...]] = None

  def __len__(self) -> int:
    """Number of units."""
    return len(self.ids)

  @property
  def marginal_rate(self) -> Optional[float]:
    """Pooled success rate sum(y)/sum(n) for binomial data."""
    if self.kind is not PayloadKind.BINOMIAL:
      return None
    return float(self.y.sum() / self.n.sum())

  def unit(self, index: int) -> UnitRecord:
    """Rebuild the record of the unit at ``index``."""
    if self.kind is PayloadKind.NORMAL:
      payload: Payload = NormalObs(x=float(self.x[index]), sigma2=float(self.sigma2[index]))
    elif self.kind is PayloadKind.BINOMIAL:
      payload = BinomialObs(y=int(self.y[index]), n=int(self.n[index]))
    else:
      payload = PosteriorDraws(draws=tuple(float(d) for d in self.draws[index]))
    return UnitRecord(id=self.ids[index], payload=payload)

  def units(self) -> List[UnitRecord]:
    """Rebuild all unit records."""
    return [self.unit(i) for i in range(len(self.ids))]

  def index_of(self) -> Dict[str, int]:
    """Map unit id to row position."""
    return {unit_id: i for i, unit_id in enumerate(self.ids)}

  def reorder(self, ids: Sequence[str]) -> "Dataset":
    """Return the dataset with rows in the order of ``ids``."""
    positions = self.index_of()
    idx = np.array([positions[unit_id] for unit_id in ids], dtype=np.int64)
    return Dataset(
      kind=self.kind,
      ids=tuple(ids),
      x=None if self.x is None else _readonly(self.x[idx].copy()),
      sigma2=None if self.sigma2 is None else _readonly(self.sigma2[idx].copy()),
      y=None if self.y is None else _readonly(self.y[idx].copy()),
      n=None if self.n is None else _readonly(self.n[idx].copy()),
      draws=None if self.draws is None else tuple(self.draws[i] for i in idx),
    )

  def data_hash(self) -> str:
    """Return the sha256 of the canonical CSV rendering of the dataset."""
    lines = [self.kind.value]
    for i, unit_id in enumerate(self.ids):
      if self.kind is PayloadKind.NORMAL:
        fields = [repr(float(self.x[i])), repr(float(self.sigma2[i]))]
      elif self.kind is PayloadKind.BINOMIAL:
        fields = [str(int(self.y[i])), str(int(self.n[i]))]
      else:
        fields = [repr(float(d)) for d in self.draws[i]]
      lines.append(",".join([unit_id, *fields]))
    return sha256_hex("\n".join(lines).encode("utf-8"))


def _column_violations(ids: Sequence[str], bad: np.ndarray, message: str) -> List[Dict[str, str]]:
  return [{"id": ids[i], "message": message} for i in np.flatnonzero(bad)]


def dataset_from_columns(
  kind: Union[PayloadKind, str],
  ids: Sequence[str],
  x: Optional[np.ndarray] = None,
  sigma2: Optional[np.ndarray] = None,
  y: Optional[np.ndarray] = None,
  n: Optional[np.ndarray] = None,
) -> Dataset:
  """Build a normal or binomial Dataset directly from column arrays.

  Applies the same per-unit invariants as the record models, vectorized,
  for populations too large to round-trip through UnitRecord.

  Raises:
    EmptyDatasetError: No units
    InvalidUnitError: Duplicate ids or out-of-range values (all listed)
  """
  kind = PayloadKind(kind)
  ids = tuple(str(unit_id) for unit_id in ids)
  if not ids:
    raise EmptyDatasetError()
  violations: List[Dict[str, str]] = []
  if len(set(ids)) != len(ids):
    _, first, counts = np.unique(np.asarray(ids, dtype=str), return_index=True, return_counts=True)
    violations += [{"id": ids[i], "message": f"duplicate id ({c} rows)"} for i, c in zip(first, counts) if c > 1]

  if kind is PayloadKind.NORMAL:
    x_col = np.asarray(x, dtype=float).copy()
    s_col = np.asarray(sigma2, dtype=float).copy()
    violations += _column_violations(ids, ~np.isfinite(x_col), "x: must be finite")
    violations += _column_violations(ids, ~(np.isfinite(s_col) & (s_col > 0)), "sigma2: must be positive and finite")
    if violations:
      raise InvalidUnitError(violations)
    return Dataset(kind=kind, ids=ids, x=_readonly(x_col), sigma2=_readonly(s_col))

  if kind is PayloadKind.BINOMIAL:
    y_col = np.asarray(y, dtype=np.int64).copy()
    n_col = np.asarray(n, dtype=np.int64).copy()
    violations += _column_violations(ids, y_col < 0, "y: must be >= 0")
    violations += _column_violations(ids, n_col < 1, "n: must be >= 1")
    violations += _column_violations(ids, y_col > n_col, "y exceeds n")
    if violations:
      raise InvalidUnitError(violations)
    return Dataset(kind=kind, ids=ids, y=_readonly(y_col), n=_readonly(n_col))

  raise ValueError("posterior-draws datasets are built with validate_dataset")


def _format_validation_error(error: ValidationError) -> str:
  parts = []
  for item in error.errors():
    loc = ".".join(str(p) for p in item.get("loc", ()) if p not in ("payload", "normal", "binomial", "draws"))
    parts.append(f"{loc}: {item['msg']}" if loc else item["msg"])
  return "; ".join(parts)


def validate_dataset(
  units: Union["Dataset", Sequence[Union[UnitRecord, Mapping[str, Any]]]],
  source: Optional[str] = None,
) -> Dataset:
  """Validate unit records and assemble a column-oriented Dataset.

  Args:
    units: UnitRecord objects or raw mappings ``{"id": ..., "payload": {...}}``;
      an already validated Dataset is returned unchanged
    source: Optional name of the input (used in error details)

  Returns:
    Dataset tagged with the shared payload kind

  Raises:
    EmptyDatasetError: No units supplied
    InvalidUnitError: One or more units violate their invariants (all listed)
    MixedPayloadKindsError: Units carry different payload kinds

  Examples:
    >>> ds = validate_dataset([UnitRecord(id="a", payload=NormalObs(x=0.0, sigma2=1.0))])
    >>> ds.kind.value, len(ds)
    ('normal', 1)
  """
  if isinstance(units, Dataset):
    return units
  if len(units) == 0:
    raise EmptyDatasetError(source)

  records: List[UnitRecord] = []
  violations: List[Dict[str, str]] = []
  for position, unit in enumerate(units):
    if isinstance(unit, UnitRecord):
      records.append(unit)
      continue
    unit_id = str(unit.get("id", f"#{position}")) if isinstance(unit, Mapping) else f"#{position}"
    try:
      records.append(UnitRecord.model_validate(unit))
    except ValidationError as e:
      violations.append({"id": unit_id, "message": _format_validation_error(e)})

  seen: Dict[str, int] = {}
  for record in records:
    seen[record.id] = seen.get(record.id, 0) + 1
  for unit_id, count in seen.items():
    if count > 1:
      violations.append({"id": unit_id, "message": f"duplicate id ({count} rows)"})

  if violations:
    raise InvalidUnitError(violations)

  kinds = {record.payload.kind for record in records}
  if len(kinds) > 1:
    raise MixedPayloadKindsError(list(kinds))
  kind = PayloadKind(kinds.pop())
  ids = tuple(record.id for record in records)

  if kind is PayloadKind.NORMAL:
    dataset = Dataset(
      kind=kind,
      ids=ids,
      x=_readonly(np.array([r.payload.x for r in records], dtype=float)),
      sigma2=_readonly(np.array([r.payload.sigma2 for r in records], dtype=float)),
    )
  elif kind is PayloadKind.BINOMIAL:
    dataset = Dataset(
      kind=kind,
      ids=ids,
      y=_readonly(np.array([r.payload.y for r in records], dtype=np.int64)),
      n=_readonly(np.array([r.payload.n for r in records], dtype=np.int64)),
    )
    logger.info(
      f"Validated {len(ids)} binomial units; marginal rate {dataset.marginal_rate:.3f}",
      extra={"units": len(ids), "total_y": int(dataset.y.sum()), "total_n": int(dataset.n.sum())},
    )
  else:
    draws = tuple(_readonly(np.sort(np.asarray(r.payload.draws, dtype=float))) for r in records)
    short = [unit_id for unit_id, d in zip(ids, draws) if len(d) < settings.MIN_POSTERIOR_DRAWS]
    if short:
      logger.warning(
        f"{len(short)} unit(s) have fewer than {settings.MIN_POSTERIOR_DRAWS} posterior draws",
        extra={"unit_ids": short[:20]},
      )
    dataset = Dataset(kind=kind, ids=ids, draws=draws)

  return dataset
