"""Result containers produced by the engine, rankers and simulation studies."""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import special


PROBIT_FLOOR = 1e-15


class Orientation(str, Enum):
  """Which end of a ranking variable is the top."""

  SMALLER_IS_BETTER = "smaller"
  LARGER_IS_BETTER = "larger"


class RootFlag(str, Enum):
  """Outcome of an r-value root solve."""

  OK = "ok"
  AT_BOUNDARY_TOP = "at-boundary-top"
  NO_CROSSING = "no-crossing"


@dataclass(frozen=True, eq=False)
class AlphaGrid:
  """Strictly increasing alpha nodes in (0, 1)."""

  nodes: np.ndarray

  def __post_init__(self):
    """Validate and freeze the nodes."""
    values = np.asarray(self.nodes, dtype=float).copy()
    if values.ndim != 1 or values.size == 0:
      raise ValueError("alpha grid must be a non-empty vector")
    if np.any((values <= 0) | (values >= 1)):
      raise ValueError("alpha grid nodes must lie in (0, 1)")
    if np.any(np.diff(values) <= 0):
      raise ValueError("alpha grid nodes must be strictly increasing")
    values.setflags(write=False)
    object.__setattr__(self, "nodes", values)

  def __len__(self) -> int:
    """Number of nodes."""
    return int(self.nodes.size)

  @property
  def min(self) -> float:
    """Smallest node."""
    return float(self.nodes[0])

  @property
  def max(self) -> float:
    """Largest node."""
    return float(self.nodes[-1])


@dataclass(frozen=True, eq=False)
class LambdaCurve:
  """Grid estimate of the crossing level lambda_alpha.

  Between nodes the curve is linear on the probit scale of both alpha and
  lambda; outside the grid it is flat.
  """

  grid: AlphaGrid
  raw: np.ndarray
  smoothed: np.ndarray
  warnings: Tuple[str, ...] = ()

  def __post_init__(self):
    """Validate shapes and range."""
    raw = np.asarray(self.raw, dtype=float).copy()
    smoothed = np.clip(np.asarray(self.smoothed, dtype=float), 0.0, 1.0)
    if raw.shape != self.grid.nodes.shape or smoothed.shape != self.grid.nodes.shape:
      raise ValueError("lambda curve values must align with the grid")
    raw.setflags(write=False)
    smoothed.setflags(write=False)
    object.__setattr__(self, "raw", raw)
    object.__setattr__(self, "smoothed", smoothed)

  def __call__(self, alpha):
    """Evaluate the smoothed curve at alpha."""
    level = np.clip(self.smoothed, PROBIT_FLOOR, 1.0 - PROBIT_FLOOR)
    alpha = np.asarray(alpha, dtype=float)
    probit = np.interp(special.ndtri(alpha), special.ndtri(self.grid.nodes), special.ndtri(level))
    return special.ndtr(probit)

  def to_frame(self) -> pd.DataFrame:
    """Tabulate the curve."""
    return pd.DataFrame({"alpha": self.grid.nodes, "lambda_raw": self.raw, "lambda_smoothed": self.smoothed})


@dataclass(frozen=True, eq=False)
class RValueResult:
  """Per-unit r-values with solver diagnostics."""

  ids: Tuple[str, ...]
  rvalue: np.ndarray
  residual: np.ndarray
  multiple_roots: np.ndarray
  flags: Tuple[RootFlag, ...]
  lambda_curve: Optional[LambdaCurve] = None

  def to_frame(self) -> pd.DataFrame:
    """Tabulate r-values and diagnostics."""
    return pd.DataFrame({
      "id": list(self.ids),
      "rvalue": self.rvalue,
      "residual": self.residual,
      "multiple_roots": self.multiple_roots,
      "flags": [flag.value for flag in self.flags],
    })


@dataclass
class RankingTable:
  """Ranking variables, integer ranks and diagnostics for every method.

  Attributes:
    ids: Unit ids in input order
    variables: Method name -> ranking variable per unit
    orientations: Method name -> Orientation
    ranks: Method name -> integer ranks (1 = top)
    extra_columns: Additional per-unit columns (flags, residuals, shifts)
    diagnostics: Fitted prior, grid size and solver summaries
  """

  ids: Tuple[str, ...]
  variables: Dict[str, np.ndarray] = field(default_factory=dict)
  orientations: Dict[str, Orientation] = field(default_factory=dict)
  ranks: Dict[str, np.ndarray] = field(default_factory=dict)
  extra_columns: Dict[str, Any] = field(default_factory=dict)
  diagnostics: Dict[str, Any] = field(default_factory=dict)

  @property
  def methods(self) -> List[str]:
    """Method names in insertion order."""
    return list(self.variables)

  def to_frame(self) -> pd.DataFrame:
    """Tabulate as id, one value and one rank column per method, then extras."""
    data: Dict[str, Any] = {"id": list(self.ids)}
    for method in self.methods:
      data[method] = self.variables[method]
      data[f"rank_{method}"] = self.ranks[method]
    data.update(self.extra_columns)
    return pd.DataFrame(data)


@dataclass(frozen=True)
class AgreementRow:
  """One method at one alpha in an agreement study."""

  method: str
  alpha: float
  selected: int
  agreement: float
  fdr: float
  power: float
  selected_sigma2_median: float
  selected_sigma2_q1: float
  selected_sigma2_q3: float
  agreement_mc_se: float


@dataclass
class AgreementReport:
  """Agreement, FDR and power per method and alpha.

  Attributes:
    rows: One row per (method, alpha)
    marginal_sigma2_median: Median sampling variance over all units
    n_units: Population size
    seed: Simulation seed
    label: Free-form study label (e.g. the variance-law CV)
  """

  rows: List[AgreementRow]
  marginal_sigma2_median: float
  n_units: int
  seed: int
  label: str = ""

  def row(self, method: str, alpha: float) -> AgreementRow:
    """Look up one row."""
    for candidate in self.rows:
      if candidate.method == method and np.isclose(candidate.alpha, alpha):
        return candidate
    raise KeyError(f"no row for method={method} alpha={alpha}")

  def to_frame(self) -> pd.DataFrame:
    """Tabulate the report."""
    frame = pd.DataFrame([row.__dict__ for row in self.rows])
    frame.insert(0, "label", self.label)
    frame["marginal_sigma2_median"] = self.marginal_sigma2_median
    frame["seed"] = self.seed
    return frame

  def to_long_frame(self, study: str) -> pd.DataFrame:
    """Long report: study, label, method, alpha_or_t, metric, value, mc_se, seed."""
    records = []
    for row in self.rows:
      metrics = {
        "selected": row.selected,
        "agreement": row.agreement,
        "fdr": row.fdr,
        "power": row.power,
        "selected_sigma2_median": row.selected_sigma2_median,
        "selected_sigma2_q1": row.selected_sigma2_q1,
        "selected_sigma2_q3": row.selected_sigma2_q3,
        "marginal_sigma2_median": self.marginal_sigma2_median,
      }
      for metric, value in metrics.items():
        records.append({
          "study": study,
          "label": self.label,
          "method": row.method,
          "alpha_or_t": row.alpha,
          "metric": metric,
          "value": value,
          "mc_se": row.agreement_mc_se if metric == "agreement" else np.nan,
          "seed": self.seed,
        })
    return pd.DataFrame.from_records(records)


@dataclass(frozen=True)
class SimilarityRow:
  """Mean top-t similarity of one method."""

  method: str
  t: int
  mean: float
  mc_se: float


@dataclass
class SimilarityReport:
  """Top-t similarity of each method's ranking against simulated true rankings.

  Attributes:
    rows: One row per (method, t)
    replicates: Number of simulated truth vectors
    seed: Simulation seed
    label: Free-form study label
  """

  rows: List[SimilarityRow]
  replicates: int
  seed: int
  label: str = ""

  def row(self, method: str, t: int) -> SimilarityRow:
    """Look up one row."""
    for candidate in self.rows:
      if candidate.method == method and candidate.t == t:
        return candidate
    raise KeyError(f"no row for method={method} t={t}")

  def to_frame(self) -> pd.DataFrame:
    """Tabulate the report."""
    frame = pd.DataFrame([row.__dict__ for row in self.rows])
    frame["replicates"] = self.replicates
    frame["seed"] = self.seed
    return frame

  def to_long_frame(self, study: str) -> pd.DataFrame:
    """Long report in the same layout as AgreementReport.to_long_frame."""
    return pd.DataFrame({
      "study": study,
      "label": self.label,
      "method": [row.method for row in self.rows],
      "alpha_or_t": [row.t for row in self.rows],
      "metric": "similarity",
      "value": [row.mean for row in self.rows],
      "mc_se": [row.mc_se for row in self.rows],
      "seed": self.seed,
    })
