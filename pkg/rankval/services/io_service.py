"""Reading unit tables and writing result artifacts.

Input CSV layouts (one header row, `#` comment lines ignored, extra columns ignored):
- normal:   id, x, sigma2
- binomial: id, y, n
- draws:    id, draw   (long: one row per draw)
            id, d1, d2, ...   (wide: one row per unit, every numeric column a draw)
            ids only, plus a sidecar: a long or wide CSV keyed by id, or a
            headerless matrix (CSV or .npy) whose rows follow the unit file

Output CSVs start with a `# config_hash: <hex>` line and print reals with
settings.TABLE_SIGNIFICANT_DIGITS significant digits. JSON documents use
pydantic's round-trip float representation.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from rankval.config import settings
from rankval.core.exceptions import DataError, EmptyDatasetError, InvalidConfigError, MissingInputError
from rankval.models.priors import PriorSpec
from rankval.models.units import Dataset, PayloadKind, validate_dataset
from rankval.schemas.documents import FittedPriorDocument
from rankval.schemas.sim import SimConfig

logger = logging.getLogger(__name__)

KIND_COLUMNS: Dict[PayloadKind, List[str]] = {
  PayloadKind.NORMAL: ["x", "sigma2"],
  PayloadKind.BINOMIAL: ["y", "n"],
  PayloadKind.DRAWS: ["draw"],
}
CONFIG_HASH_PREFIX = "# config_hash: "


# ============================================================================
# Reading
# ============================================================================

def read_frame(path: Union[str, Path]) -> pd.DataFrame:
  """Read a CSV with string ids, skipping `#` comment lines.

  Raises:
    MissingInputError: File does not exist
    EmptyDatasetError: File has no header or no rows
  """
  path = Path(path)
  if not path.is_file():
    raise MissingInputError(str(path))
  try:
    frame = pd.read_csv(path, dtype={"id": str}, comment="#", skipinitialspace=True)
  except pd.errors.EmptyDataError:
    raise EmptyDatasetError(str(path)) from None
  if frame.empty:
    raise EmptyDatasetError(str(path))
  frame.columns = [str(c).strip() for c in frame.columns]
  return frame


def detect_kind(frame: pd.DataFrame, draws_sidecar: bool = False) -> PayloadKind:
  """Infer the payload kind from the column names.

  A table of id plus two or more numeric columns and nothing else is read
  as wide posterior draws.

  Raises:
    DataError: No kind or more than one kind matches
  """
  if draws_sidecar:
    return PayloadKind.DRAWS
  matches = [kind for kind, cols in KIND_COLUMNS.items() if set(cols) <= set(frame.columns)]
  if not matches and "id" in frame.columns and len(wide_draw_columns(frame)) == len(frame.columns) - 1 >= 2:
    return PayloadKind.DRAWS
  if len(matches) != 1:
    raise DataError(
      "Cannot infer the payload kind from the columns",
      details={"columns": list(frame.columns), "expected_one_of": {k.value: v for k, v in KIND_COLUMNS.items()}},
    )
  return matches[0]


def _require_columns(frame: pd.DataFrame, columns: List[str], source: str) -> None:
  missing = [c for c in ["id", *columns] if c not in frame.columns]
  if missing:
    raise DataError(
      f"Missing column(s): {', '.join(missing)}",
      details={"source": source, "columns": list(frame.columns)},
    )


def _cell(value: Any) -> Any:
  if isinstance(value, float) and np.isnan(value):
    return None
  return value


def read_units(
  path: Union[str, Path],
  kind: Optional[Union[PayloadKind, str]] = None,
  draws_path: Optional[Union[str, Path]] = None,
) -> Dataset:
  """Read and validate a unit table.

  Args:
    path: CSV file
    kind: Payload kind (inferred from the columns when omitted)
    draws_path: Sidecar draws (long or wide CSV keyed by id, or a headerless matrix); ``path`` then lists the ids

  Returns:
    Validated Dataset in file row order

  Raises:
    MissingInputError: A file does not exist
    EmptyDatasetError: No rows
    DataError: Missing columns or unknown ids in the sidecar
    InvalidUnitError: Row values violate their invariants (all listed)
  """
  source = str(path)
  frame = read_frame(path)
  kind = PayloadKind(kind) if kind is not None else detect_kind(frame, draws_sidecar=draws_path is not None)

  if kind is PayloadKind.DRAWS:
    return _read_draws(frame, source, draws_path)

  _require_columns(frame, KIND_COLUMNS[kind], source)
  columns = KIND_COLUMNS[kind]
  values = {c: pd.to_numeric(frame[c], errors="coerce") for c in columns}
  records = []
  for row in range(len(frame)):
    payload = {"kind": kind.value}
    for c in columns:
      cell = values[c].iloc[row]
      raw = frame[c].iloc[row]
      payload[c] = raw if pd.isna(cell) and not pd.isna(raw) else _cell(float(cell))
    records.append({"id": "" if pd.isna(frame["id"].iloc[row]) else frame["id"].iloc[row], "payload": payload})
  dataset = validate_dataset(records, source=source)
  logger.info(f"Read {len(dataset)} {kind.value} units from {source}", extra={"data_hash": dataset.data_hash()})
  return dataset


def wide_draw_columns(frame: pd.DataFrame) -> List[str]:
  """Numeric columns other than id; each one holds one draw per unit in the wide layout."""
  return [c for c in frame.columns if c != "id" and pd.api.types.is_numeric_dtype(frame[c])]


def _draws_by_id(frame: pd.DataFrame, source: str) -> Dict[str, List[Any]]:
  """Group draws by id from a long (id, draw) or wide (id, draw columns) table."""
  _require_columns(frame, [], source)
  ids = frame["id"].astype(str).str.strip()
  if "draw" in frame.columns:
    draws = pd.to_numeric(frame["draw"], errors="coerce")
    grouped: Dict[str, List[Any]] = {}
    for unit_id, value in zip(ids, draws):
      grouped.setdefault(unit_id, []).append(_cell(float(value)))
    return grouped

  columns = wide_draw_columns(frame)
  if not columns:
    raise DataError(
      "No draw column: expected a 'draw' column or numeric draw columns",
      details={"source": source, "columns": list(frame.columns)},
    )
  grouped = {}
  matrix = frame[columns].to_numpy(dtype=float)
  for unit_id, row in zip(ids, matrix):
    # Empty trailing cells pad units with fewer draws.
    grouped.setdefault(unit_id, []).extend(row[~np.isnan(row)].tolist())
  return grouped


def read_draw_matrix(path: Union[str, Path]) -> np.ndarray:
  """Read a headerless draws matrix (``.npy`` or CSV), one row per unit in unit-file order.

  Raises:
    MissingInputError: File does not exist
    DataError: Not a two-dimensional numeric matrix
  """
  path = Path(path)
  if not path.is_file():
    raise MissingInputError(str(path))
  try:
    if path.suffix == ".npy":
      matrix = np.load(path, allow_pickle=False)
    else:
      matrix = pd.read_csv(path, header=None, comment="#", skipinitialspace=True).to_numpy(dtype=float)
  except (ValueError, pd.errors.EmptyDataError) as e:
    raise DataError(f"Cannot read a numeric draws matrix from {path}", details={"reason": str(e)}) from None
  matrix = np.asarray(matrix, dtype=float)
  if matrix.ndim != 2 or matrix.size == 0:
    raise DataError(f"Draws matrix in {path} must be two-dimensional", details={"shape": list(matrix.shape)})
  return matrix


def _read_draws(frame: pd.DataFrame, source: str, draws_path: Optional[Union[str, Path]]) -> Dataset:
  if draws_path is None:
    grouped = _draws_by_id(frame, source)
    order = list(grouped)
  else:
    _require_columns(frame, [], source)
    order = list(dict.fromkeys(frame["id"].astype(str).str.strip()))
    sidecar = Path(draws_path)
    table = None
    if sidecar.suffix != ".npy":
      try:
        table = read_frame(sidecar)
      except EmptyDatasetError:
        # A one-row matrix has nothing left once its first line is taken as a header.
        table = None
    if table is not None and "id" in table.columns:
      grouped = _draws_by_id(table, str(sidecar))
      unknown = sorted(set(grouped) - set(order))
      if unknown:
        raise DataError("Draws file names ids absent from the unit file", details={"ids": unknown[:20]})
    else:
      matrix = read_draw_matrix(sidecar)
      if matrix.shape[0] != len(order):
        raise DataError(
          "Draws matrix rows must match the units one to one",
          details={"rows": int(matrix.shape[0]), "units": len(order)},
        )
      grouped = {unit_id: row[~np.isnan(row)].tolist() for unit_id, row in zip(order, matrix)}

  records = [{"id": unit_id, "payload": {"kind": "draws", "draws": grouped.get(unit_id, [])}} for unit_id in order]
  dataset = validate_dataset(records, source=source)
  logger.info(f"Read posterior draws for {len(dataset)} units from {source}")
  return dataset


def read_prior(path: Union[str, Path]) -> PriorSpec:
  """Load a FittedPriorDocument and rebuild its PriorSpec.

  Raises:
    MissingInputError: File does not exist
    InvalidConfigError: Document does not parse
  """
  return read_prior_document(path).to_prior_spec()


def read_prior_document(path: Union[str, Path]) -> FittedPriorDocument:
  """Load a FittedPriorDocument."""
  return _read_model(path, FittedPriorDocument)


def read_sim_config(path: Union[str, Path]) -> SimConfig:
  """Load a bench study config, resolving data paths relative to the config file."""
  config = _read_model(path, SimConfig)
  base = Path(path).parent
  updates = {
    name: base / value
    for name, value in (("train_path", config.train_path), ("full_path", config.full_path))
    if value is not None and not value.is_absolute()
  }
  return config.model_copy(update=updates) if updates else config


def _read_model(path: Union[str, Path], model: type) -> Any:
  path = Path(path)
  if not path.is_file():
    raise MissingInputError(str(path))
  try:
    return model.model_validate_json(path.read_text(encoding="utf-8"))
  except ValidationError as e:
    raise InvalidConfigError(
      f"Invalid {model.__name__} in {path}",
      details={"errors": [{"loc": list(err["loc"]), "msg": err["msg"]} for err in e.errors()]},
    ) from None


def read_config_hash(path: Union[str, Path]) -> Optional[str]:
  """Return the config hash recorded on the first line of an output CSV."""
  with open(path, encoding="utf-8") as handle:
    first = handle.readline().rstrip("\n")
  return first[len(CONFIG_HASH_PREFIX):] if first.startswith(CONFIG_HASH_PREFIX) else None


# ============================================================================
# Writing
# ============================================================================

def write_table(frame: pd.DataFrame, path: Union[str, Path], config_hash: str, digits: Optional[int] = None) -> Path:
  """Write a CSV table headed by its config hash.

  Args:
    frame: Table to write
    path: Destination
    config_hash: Hash of the config that produced the table
    digits: Significant digits for reals (settings.TABLE_SIGNIFICANT_DIGITS by default)

  Returns:
    The written path
  """
  path = Path(path)
  with open(path, "w", encoding="utf-8", newline="") as handle:
    handle.write(render_table(frame, config_hash, digits))
  logger.debug(f"Wrote {len(frame)} rows to {path}")
  return path


def write_json(document: BaseModel, path: Union[str, Path]) -> Path:
  """Write a pydantic document as indented JSON."""
  path = Path(path)
  path.write_text(document.model_dump_json(indent=2) + "\n", encoding="utf-8")
  return path


def v_matrix_frame(ids: Any, alphas: np.ndarray, v_matrix: np.ndarray) -> pd.DataFrame:
  """Long-format V matrix: id, alpha, tailprob."""
  ids = np.asarray(list(ids), dtype=object)
  return pd.DataFrame({
    "id": np.repeat(ids, alphas.size),
    "alpha": np.tile(alphas, ids.size),
    "tailprob": np.asarray(v_matrix).ravel(),
  })


def render_table(frame: pd.DataFrame, config_hash: str, digits: Optional[int] = None) -> str:
  """CSV text of a table, headed by its config hash."""
  digits = digits or settings.TABLE_SIGNIFICANT_DIGITS
  body = frame.to_csv(index=False, float_format=f"%.{digits}g", lineterminator="\n")
  return f"{CONFIG_HASH_PREFIX}{config_hash}\n{body}"
