"""Assemble ranking tables: r-values next to the baseline ranking variables."""

import logging
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from rankval.core.exceptions import InvalidConfigError, ModelMismatchError
from rankval.core.utils import deterministic_ranks, relative_rank_shift
from rankval.models.priors import NormalPrior, PriorSpec, ThetaLaw
from rankval.models.results import AlphaGrid, LambdaCurve, Orientation, RankingTable, RValueResult, RootFlag
from rankval.models.units import Dataset, PayloadKind
from rankval.services.baseline_rankers import RANKING_METHODS, ranking_variables
from rankval.services.rvalue_engine import (
  closed_form_rvalues,
  default_alpha_grid,
  lambda_curve_for,
  solve_rvalues,
)
from rankval.services.tail_prob import TailModel

logger = logging.getLogger(__name__)

RVALUE_ENGINES = ("grid", "closed-form")

DEFAULT_METHODS: Dict[PayloadKind, List[str]] = {
  PayloadKind.NORMAL: ["mle", "pm", "per", "pv", "pvalue", "bf"],
  PayloadKind.BINOMIAL: ["mle", "pm", "per", "pvalue"],
  PayloadKind.DRAWS: ["mle", "pm", "per"],
}


class RankingService:
  """Rank one dataset under one prior.

  The r-value solve runs once and is cached; every table built from the
  service reuses it.
  """

  def __init__(
    self,
    dataset: Dataset,
    prior: Union[ThetaLaw, PriorSpec],
    grid: Optional[AlphaGrid] = None,
    bandwidth: Optional[float] = None,
    isotonic: Optional[str] = None,
    lambda_source: Optional[str] = None,
    engine: str = "grid",
    pvalue_c: float = 0.0,
  ):
    """Initialize ranking service.

    Args:
      dataset: Validated dataset
      prior: Theta law, or PriorSpec (the variance law is needed by the closed-form engine)
      grid: Alpha grid (default grid when omitted)
      bandwidth: Lambda smoothing bandwidth in nodes
      isotonic: Lambda isotonic projection mode
      lambda_source: "empirical" or "model" lambda for the grid engine
      engine: "grid" or "closed-form"
      pvalue_c: Benchmark null for PV statistics and normal p-values

    Raises:
      InvalidConfigError: Unknown engine
      ModelMismatchError: closed-form requested without normal data, normal prior and variance law
    """
    if engine not in RVALUE_ENGINES:
      raise InvalidConfigError(f"Unknown r-value engine '{engine}'", details={"allowed": list(RVALUE_ENGINES)})
    self.spec = prior if isinstance(prior, PriorSpec) else PriorSpec(theta_law=prior)
    if engine == "closed-form" and not (
      dataset.kind is PayloadKind.NORMAL
      and isinstance(self.spec.theta_law, NormalPrior)
      and self.spec.variance_law is not None
    ):
      raise ModelMismatchError(dataset.kind.value, "closed-form (needs normal data, normal prior and variance law)")
    self.dataset = dataset
    self.model = TailModel(dataset, self.spec)
    self.grid = grid or default_alpha_grid()
    self.bandwidth = bandwidth
    self.isotonic = isotonic
    self.lambda_source = lambda_source
    self.engine = engine
    self.pvalue_c = pvalue_c
    self.v_matrix: Optional[np.ndarray] = None
    self.lambda_curve: Optional[LambdaCurve] = None
    self._rvalues: Optional[RValueResult] = None

  def rvalues(self) -> RValueResult:
    """Compute (once) the r-value of every unit."""
    if self._rvalues is not None:
      return self._rvalues
    if self.engine == "closed-form":
      values = closed_form_rvalues(self.dataset.x, self.dataset.sigma2, self.spec.theta_law, self.spec.variance_law)
      count = len(self.dataset)
      self._rvalues = RValueResult(
        ids=self.dataset.ids,
        rvalue=values,
        residual=np.zeros(count),
        multiple_roots=np.zeros(count, dtype=bool),
        flags=tuple(RootFlag.NO_CROSSING if v >= 1.0 else RootFlag.OK for v in values),
      )
      return self._rvalues
    self.v_matrix = self.model.matrix(self.grid.nodes)
    self.lambda_curve = lambda_curve_for(
      self.dataset,
      self.spec,
      self.v_matrix,
      self.grid,
      bandwidth=self.bandwidth,
      isotonic=self.isotonic,
      lambda_source=self.lambda_source,
    )
    self._rvalues = solve_rvalues(self.model, self.lambda_curve, v_matrix=self.v_matrix)
    return self._rvalues

  def rvalue_frame(self) -> pd.DataFrame:
    """Table with columns id, rvalue, rank, flags, residual, multiple_roots."""
    result = self.rvalues()
    frame = result.to_frame()
    frame.insert(2, "rank", deterministic_ranks(result.rvalue, result.ids, larger_is_better=False))
    return frame[["id", "rvalue", "rank", "flags", "residual", "multiple_roots"]]

  def available_methods(self) -> List[str]:
    """Baseline methods that are defined for this dataset's kind."""
    return list(DEFAULT_METHODS[self.dataset.kind])

  def build_table(
    self,
    methods: Optional[Sequence[str]] = None,
    min_successes: Optional[int] = None,
    shifts: bool = True,
  ) -> RankingTable:
    """Build the full ranking table.

    Args:
      methods: Baseline methods to include (all defined ones by default)
      min_successes: Binomial only; units with y below it get no qualified rank
      shifts: Add (X - R)/(X + R) columns comparing each method's rank with the r-value rank

    Returns:
      RankingTable with the r-value first, then each baseline method

    Raises:
      InvalidConfigError: Unknown method or min_successes on non-binomial data
      BFUndefinedError: bf requested for non-normal data
    """
    methods = [m.lower() for m in (methods or self.available_methods())]
    unknown = [m for m in methods if m not in RANKING_METHODS]
    if unknown:
      raise InvalidConfigError(
        f"Unknown ranking method(s): {', '.join(unknown)}",
        details={"allowed": list(RANKING_METHODS)},
      )
    if min_successes is not None and self.dataset.kind is not PayloadKind.BINOMIAL:
      raise InvalidConfigError("--min-successes applies to binomial data only")

    result = self.rvalues()
    ids = self.dataset.ids
    table = RankingTable(ids=ids)
    table.variables["rvalue"] = result.rvalue
    table.orientations["rvalue"] = Orientation.SMALLER_IS_BETTER
    table.ranks["rvalue"] = deterministic_ranks(result.rvalue, ids, larger_is_better=False)

    for method in methods:
      values, orientation = ranking_variables(self.dataset, self.spec, method, pvalue_c=self.pvalue_c)
      table.variables[method] = values
      table.orientations[method] = orientation
      table.ranks[method] = deterministic_ranks(values, ids, orientation is Orientation.LARGER_IS_BETTER)

    table.extra_columns["rvalue_flags"] = [flag.value for flag in result.flags]
    table.extra_columns["rvalue_residual"] = result.residual
    table.extra_columns["rvalue_multiple_roots"] = result.multiple_roots
    if shifts:
      for method in methods:
        table.extra_columns[f"shift_{method}"] = relative_rank_shift(table.ranks[method], table.ranks["rvalue"])
    if min_successes is not None:
      table.extra_columns["qualified_rank"] = self.qualified_ranks(table.ranks["rvalue"], min_successes)

    table.diagnostics = self.diagnostics()
    logger.info(
      f"Built ranking table for {len(ids)} units",
      extra={"methods": ["rvalue", *methods], "engine": self.engine},
    )
    return table

  def qualified_ranks(self, ranks: np.ndarray, min_successes: int) -> pd.array:
    """Re-rank the units with y >= min_successes in the order of ``ranks``; others get <NA>."""
    qualified = self.dataset.y >= min_successes
    out = pd.array([pd.NA] * len(ranks), dtype="Int64")
    order = np.argsort(ranks, kind="stable")
    kept = order[qualified[order]]
    out[kept] = np.arange(1, kept.size + 1)
    return out

  def diagnostics(self) -> Dict[str, Any]:
    """Prior, grid and solver summaries for manifests and logs."""
    result = self.rvalues()
    info: Dict[str, Any] = {
      "engine": self.engine,
      "prior": self.spec.theta_law.params(),
      "n_units": len(self.dataset),
      "at_boundary_top": sum(flag is RootFlag.AT_BOUNDARY_TOP for flag in result.flags),
      "no_crossing": sum(flag is RootFlag.NO_CROSSING for flag in result.flags),
      "multiple_roots": int(np.sum(result.multiple_roots)),
    }
    if self.spec.variance_law is not None:
      info["variance_law"] = self.spec.variance_law.params()
    if self.engine == "grid":
      info["grid_size"] = len(self.grid)
      info["lambda_warnings"] = list(self.lambda_curve.warnings) if self.lambda_curve else []
    return info
