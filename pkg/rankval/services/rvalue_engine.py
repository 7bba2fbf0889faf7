"""r-value computation.

Two paths:
- Grid path (any model): build the V matrix on an alpha grid, estimate the
  crossing level lambda_alpha as the (1 - alpha) quantile of each column,
  smooth it, then find the smallest alpha where V_alpha(D_i) >= lambda_alpha.
  For normal data lambda_alpha can instead come from the fitted model, which
  removes the sampling noise of the column quantiles.
- Closed form (normal data with a normal prior and a variance law): invert
  the optimal threshold z = theta_r (s + 1) - u_r sqrt(s (s + 1)) for r on
  the standardized scale.
"""

import logging
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from scipy import interpolate, optimize, special, stats

from rankval.config import settings
from rankval.core.exceptions import InvalidConfigError, ModelMismatchError
from rankval.core.concurrency import map_blocks
from rankval.models.priors import EmpiricalVar, NormalPrior, PriorSpec, ThetaLaw, VarianceLaw
from rankval.models.results import AlphaGrid, LambdaCurve, RootFlag, RValueResult
from rankval.models.units import Dataset, PayloadKind
from rankval.services.baseline_rankers import (
  ThresholdFamilies,
  solve_u_alpha,
  standardize,
  standardized_law,
)
from rankval.services.tail_prob import TailModel, TailProbFn

logger = logging.getLogger(__name__)

EvaluateFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

UPPER_TAIL_START = 0.99
LAMBDA_SOURCES = ("empirical", "model")


# ============================================================================
# Grid
# ============================================================================

def default_alpha_grid(
  size: Optional[int] = None,
  alpha_min: Optional[float] = None,
  alpha_split: Optional[float] = None,
  alpha_max: Optional[float] = None,
) -> AlphaGrid:
  """Alpha grid enriched near zero and near one.

  Roughly two thirds of the nodes are uniform in log2(-log2(alpha)) between
  ``alpha_min`` and ``alpha_split``. The rest are uniform on
  (``alpha_split``, 0.99]; when ``alpha_max`` lies above 0.99, a sixth of
  them are moved to a geometric run of 1 - alpha between 0.99 and
  ``alpha_max``. Units whose r-value lies above the top node come out as 1.

  Examples:
    >>> grid = default_alpha_grid()
    >>> len(grid), grid.min <= 0.001, grid.max >= 0.999
    (199, True, True)
  """
  size = size or settings.GRID_SIZE
  alpha_min = alpha_min or settings.GRID_ALPHA_MIN
  alpha_split = alpha_split or settings.GRID_ALPHA_SPLIT
  alpha_max = alpha_max or settings.GRID_ALPHA_MAX
  if size < 3:
    raise ValueError("alpha grid needs at least three nodes")
  if not 0 < alpha_min < alpha_split < alpha_max < 1:
    raise ValueError("alpha grid bounds must satisfy 0 < min < split < max < 1")

  n_low = int(round(2 * size / 3))
  n_high = size - n_low
  loglog = np.linspace(np.log2(-np.log2(alpha_min)), np.log2(-np.log2(alpha_split)), n_low)
  low = 2.0 ** (-(2.0 ** loglog))

  n_tail = int(round(n_high / 6)) if alpha_max > UPPER_TAIL_START > alpha_split else 0
  uniform_top = UPPER_TAIL_START if n_tail else alpha_max
  high = np.linspace(alpha_split, uniform_top, n_high - n_tail + 1)[1:]
  tail = 1.0 - np.geomspace(1.0 - UPPER_TAIL_START, 1.0 - alpha_max, n_tail + 1)[1:]
  return AlphaGrid(np.concatenate([low, high, tail]))


def build_v_matrix(dataset: Dataset, prior: Union[ThetaLaw, PriorSpec], grid: AlphaGrid) -> np.ndarray:
  """Tail probabilities V_{alpha_j}(D_i) for every unit and grid node.

  Args:
    dataset: Validated dataset
    prior: Theta law (or PriorSpec)
    grid: Alpha grid

  Returns:
    Matrix of shape (units, nodes); rows are non-decreasing left to right
  """
  return TailModel(dataset, prior).matrix(grid.nodes)


# ============================================================================
# Lambda curve
# ============================================================================

def gaussian_smoother(size: int, bandwidth: float) -> np.ndarray:
  """Local-linear Gaussian kernel weights over grid index.

  Each row fits a kernel-weighted line around its own node, so rows sum to
  one and linear trends pass through unchanged, including at both ends of
  the grid.
  """
  if bandwidth <= 0:
    return np.eye(size)
  index = np.arange(size, dtype=float)
  offset = index[None, :] - index[:, None]
  kernel = np.exp(-0.5 * (offset / bandwidth) ** 2)
  s0 = kernel.sum(axis=1, keepdims=True)
  s1 = (kernel * offset).sum(axis=1, keepdims=True)
  s2 = (kernel * offset ** 2).sum(axis=1, keepdims=True)
  with np.errstate(divide="ignore", invalid="ignore"):
    weights = kernel * (s2 - offset * s1) / (s0 * s2 - s1 ** 2)
  # Bandwidths far below one node leave no neighbours to fit a line to.
  flat = ~np.isfinite(weights).all(axis=1)
  weights[flat] = np.eye(size)[flat]
  return weights


def build_lambda_curve(
  v_matrix: np.ndarray,
  grid: AlphaGrid,
  bandwidth: Optional[float] = None,
  isotonic: Optional[str] = None,
  quantile_method: Optional[str] = None,
) -> LambdaCurve:
  """Estimate lambda_alpha as the (1 - alpha) quantile of each V column, then smooth.

  Args:
    v_matrix: V matrix (units x nodes)
    grid: Alpha grid matching the columns
    bandwidth: Gaussian kernel bandwidth in nodes (0 disables smoothing)
    isotonic: "off", "increasing" or "decreasing" projection after smoothing
    quantile_method: numpy quantile method for the raw values

  Returns:
    LambdaCurve with raw and smoothed values
  """
  bandwidth = settings.SMOOTH_BANDWIDTH if bandwidth is None else bandwidth
  isotonic = (isotonic or settings.LAMBDA_ISOTONIC).lower()
  quantile_method = quantile_method or settings.LAMBDA_QUANTILE_METHOD
  v_matrix = np.asarray(v_matrix, dtype=float)
  if v_matrix.ndim != 2 or v_matrix.shape[1] != len(grid):
    raise ValueError("V matrix columns must match the alpha grid")

  warnings: List[str] = []
  n_units = v_matrix.shape[0]
  if n_units < settings.MIN_LAMBDA_UNITS:
    message = f"Only {n_units} units; lambda quantiles are unreliable below {settings.MIN_LAMBDA_UNITS}"
    logger.warning(message, extra={"units": n_units})
    warnings.append(message)

  raw = np.array([
    np.quantile(v_matrix[:, j], 1.0 - alpha, method=quantile_method)
    for j, alpha in enumerate(grid.nodes)
  ])
  smoothed = gaussian_smoother(len(grid), bandwidth) @ raw
  if isotonic != "off":
    smoothed = optimize.isotonic_regression(smoothed, increasing=(isotonic == "increasing")).x
  smoothed = np.clip(smoothed, 0.0, 1.0)

  change = float(np.max(np.abs(smoothed - raw)))
  if change > settings.SMOOTHING_WARN_DELTA:
    message = f"Smoothing moved lambda by up to {change:.3f}"
    logger.warning(message, extra={"max_change": change, "bandwidth": bandwidth})
    warnings.append(message)

  return LambdaCurve(grid=grid, raw=raw, smoothed=smoothed, warnings=tuple(warnings))


def model_lambda_curve(dataset: Dataset, prior: Union[ThetaLaw, PriorSpec], grid: AlphaGrid) -> LambdaCurve:
  """lambda_alpha from the fitted normal model instead of the units' quantiles.

  Solves the size constraint P{V_alpha(X, sigma2) >= lambda} = alpha with X
  drawn from the marginal normal model. sigma2 follows the PriorSpec's
  variance law when it has one, otherwise the units' own variances.

  Args:
    dataset: Normal dataset
    prior: Normal theta law, or PriorSpec carrying one
    grid: Alpha grid

  Returns:
    LambdaCurve whose raw and smoothed values coincide

  Raises:
    ModelMismatchError: The data are not normal or the theta law is not normal
  """
  spec = prior if isinstance(prior, PriorSpec) else PriorSpec(theta_law=prior)
  if dataset.kind is not PayloadKind.NORMAL or not isinstance(spec.theta_law, NormalPrior):
    raise ModelMismatchError(dataset.kind.value, "model lambda (needs normal data and a normal prior)")
  law = spec.variance_law if spec.variance_law is not None else EmpiricalVar(dataset.sigma2)
  values = closed_form_lambda(grid.nodes, standardized_law(law, spec.theta_law))
  logger.info("Lambda taken from the fitted model", extra={"variance_law": law.family, "nodes": len(grid)})
  return LambdaCurve(grid=grid, raw=values, smoothed=values)


def lambda_curve_for(
  dataset: Dataset,
  prior: Union[ThetaLaw, PriorSpec],
  v_matrix: np.ndarray,
  grid: AlphaGrid,
  bandwidth: Optional[float] = None,
  isotonic: Optional[str] = None,
  lambda_source: Optional[str] = None,
) -> LambdaCurve:
  """Dispatch on the lambda source ("empirical" quantiles or the fitted "model")."""
  lambda_source = (lambda_source or settings.LAMBDA_SOURCE).lower()
  if lambda_source not in LAMBDA_SOURCES:
    raise InvalidConfigError(f"Unknown lambda source '{lambda_source}'", details={"allowed": list(LAMBDA_SOURCES)})
  if lambda_source == "model":
    return model_lambda_curve(dataset, prior, grid)
  return build_lambda_curve(v_matrix, grid, bandwidth=bandwidth, isotonic=isotonic)


# ============================================================================
# Root solving
# ============================================================================

def _solve_crossings(
  v_nodes: np.ndarray,
  curve: LambdaCurve,
  evaluate: EvaluateFn,
  rows: np.ndarray,
  tol: float,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, List[RootFlag]]:
  """Smallest alpha with V_alpha >= lambda_alpha for a block of units.

  Args:
    v_nodes: V at the grid nodes, shape (block, nodes)
    curve: Lambda curve
    evaluate: (rows, alphas) -> V of each row at its alpha
    rows: Row labels passed back to ``evaluate``
    tol: Bisection tolerance in alpha

  Returns:
    Tuple of (rvalue, residual, multiple_roots, flags)
  """
  nodes = curve.grid.nodes
  delta = v_nodes - curve.smoothed[None, :]
  nonneg = delta >= 0
  has_root = nonneg.any(axis=1)
  first = np.argmax(nonneg, axis=1)
  after_first = np.arange(nodes.size)[None, :] > first[:, None]
  multiple = has_root & np.any(after_first & ~nonneg, axis=1)

  count = v_nodes.shape[0]
  rvalue = np.ones(count)
  residual = delta[:, -1].copy()
  flags = [RootFlag.NO_CROSSING] * count

  top = has_root & (first == 0)
  rvalue[top] = nodes[0]
  residual[top] = delta[top, 0]

  inner = np.flatnonzero(has_root & (first > 0))
  if inner.size:
    lo = nodes[first[inner] - 1]
    hi = nodes[first[inner]]
    while np.max(hi - lo) > tol:
      mid = 0.5 * (lo + hi)
      d = evaluate(rows[inner], mid) - curve(mid)
      ge = d >= 0
      hi = np.where(ge, mid, hi)
      lo = np.where(ge, lo, mid)
    rvalue[inner] = hi
    residual[inner] = evaluate(rows[inner], hi) - curve(hi)

  for i in range(count):
    if top[i]:
      flags[i] = RootFlag.AT_BOUNDARY_TOP
    elif has_root[i]:
      flags[i] = RootFlag.OK
  return rvalue, residual, multiple, flags


def solve_rvalue(
  tailprob: Union[TailProbFn, Callable[[np.ndarray], np.ndarray]],
  curve: LambdaCurve,
  tol: Optional[float] = None,
  unit_id: Optional[str] = None,
) -> RValueResult:
  """r-value of one unit: the smallest alpha with V_alpha(D_i) >= lambda_alpha.

  Args:
    tailprob: TailProbFn, or any vectorized callable alpha -> V_alpha
    curve: Lambda curve
    tol: Bisection tolerance in alpha (settings.ROOT_TOL by default)
    unit_id: Label for the result (taken from a TailProbFn when omitted)

  Returns:
    Single-row RValueResult; boundary cases are flagged, not raised
  """
  tol = tol or settings.ROOT_TOL
  if unit_id is None:
    unit_id = tailprob.unit.id if isinstance(tailprob, TailProbFn) else "unit"
  v_nodes = np.asarray(tailprob(curve.grid.nodes), dtype=float)[None, :]
  rvalue, residual, multiple, flags = _solve_crossings(
    v_nodes,
    curve,
    lambda rows, alphas: np.asarray(tailprob(alphas), dtype=float),
    np.zeros(1, dtype=np.int64),
    tol,
  )
  return RValueResult(
    ids=(unit_id,),
    rvalue=rvalue,
    residual=residual,
    multiple_roots=multiple,
    flags=tuple(flags),
    lambda_curve=curve,
  )


def solve_rvalues(
  model: TailModel,
  curve: LambdaCurve,
  v_matrix: Optional[np.ndarray] = None,
  tol: Optional[float] = None,
) -> RValueResult:
  """r-values of every unit of a TailModel, in parallel blocks.

  Args:
    model: Dataset bound to its prior
    curve: Lambda curve
    v_matrix: Precomputed V at the curve's grid nodes (recomputed when omitted)
    tol: Bisection tolerance in alpha

  Returns:
    RValueResult aligned with the dataset ids
  """
  tol = tol or settings.ROOT_TOL
  if v_matrix is None:
    v_matrix = model.matrix(curve.grid.nodes)

  def block(start: int, stop: int):
    rows = np.arange(start, stop)
    return _solve_crossings(v_matrix[start:stop], curve, model.pointwise, rows, tol)

  parts = map_blocks(block, len(model))
  rvalue = np.concatenate([p[0] for p in parts])
  residual = np.concatenate([p[1] for p in parts])
  multiple = np.concatenate([p[2] for p in parts])
  flags = tuple(flag for p in parts for flag in p[3])

  if multiple.any():
    logger.warning(f"{int(multiple.sum())} unit(s) cross lambda more than once; smallest root kept")
  boundary = sum(flag is RootFlag.AT_BOUNDARY_TOP for flag in flags)
  no_cross = sum(flag is RootFlag.NO_CROSSING for flag in flags)
  logger.info(
    f"Solved {len(model)} r-values",
    extra={"at_boundary_top": boundary, "no_crossing": no_cross, "max_residual": float(np.max(np.abs(residual)))},
  )
  return RValueResult(
    ids=model.dataset.ids,
    rvalue=rvalue,
    residual=residual,
    multiple_roots=multiple,
    flags=flags,
    lambda_curve=curve,
  )


def grid_rvalues(
  dataset: Dataset,
  prior: Union[ThetaLaw, PriorSpec],
  grid: Optional[AlphaGrid] = None,
  bandwidth: Optional[float] = None,
  isotonic: Optional[str] = None,
  lambda_source: Optional[str] = None,
) -> Tuple[RValueResult, np.ndarray, LambdaCurve]:
  """Run the grid algorithm end to end.

  lambda_source picks between smoothed column quantiles ("empirical") and
  the fitted normal model ("model"); settings.LAMBDA_SOURCE by default.

  Returns:
    Tuple of (r-values, V matrix, lambda curve)
  """
  grid = grid or default_alpha_grid()
  model = TailModel(dataset, prior)
  v_matrix = model.matrix(grid.nodes)
  curve = lambda_curve_for(dataset, prior, v_matrix, grid, bandwidth, isotonic, lambda_source)
  return solve_rvalues(model, curve, v_matrix=v_matrix), v_matrix, curve


# ============================================================================
# Closed form for normal data
# ============================================================================

def closed_form_lambda(alpha: Union[float, np.ndarray], variance_law: VarianceLaw) -> np.ndarray:
  """lambda_alpha implied by the optimal thresholds: 1 - Phi(u_alpha).

  Args:
    alpha: Alpha value(s)
    variance_law: Law of the standardized variance s = sigma2 / tau2

  Returns:
    lambda_alpha per alpha
  """
  solution = solve_u_alpha("maxagree", alpha, variance_law)
  return special.ndtr(-solution.u)


def closed_form_rvalue(x: float, sigma2: float, prior: NormalPrior, variance_law: VarianceLaw) -> float:
  """r-value of one normal unit by exact inversion of the optimal threshold.

  Each trial r solves its own size constraint for u_r.

  Args:
    x: Measurement
    sigma2: Sampling variance
    prior: Normal prior
    variance_law: Law of sigma2 on the original scale

  Returns:
    r in (0, 1]

  Raises:
    QuadratureFailureError: The variance-law integral did not converge
  """
  z, s = standardize(x, sigma2, prior)
  z = float(z)
  s = float(s)
  law = standardized_law(variance_law, prior)
  family = ThresholdFamilies.get("maxagree")
  r_min = 1e-12
  r_max = 1.0 - 1e-12

  def excess(log_odds: float) -> float:
    r = float(special.expit(log_odds))
    u = solve_u_alpha("maxagree", r, law).u[0]
    return float(family.evaluate(u, r, s)) - z

  lo, hi = special.logit(r_min), special.logit(r_max)
  if excess(lo) <= 0:
    return r_min
  if excess(hi) > 0:
    return 1.0
  root = optimize.brentq(excess, lo, hi, xtol=1e-12)
  return float(special.expit(root))


def closed_form_rvalues(
  x: np.ndarray,
  sigma2: np.ndarray,
  prior: NormalPrior,
  variance_law: VarianceLaw,
  n_nodes: Optional[int] = None,
) -> np.ndarray:
  """Batch closed-form r-values from a spline table of u_r.

  u_r is solved on logit-spaced r nodes in [1e-8, 1 - 1e-8] and
  interpolated with a cubic spline in logit(r); each unit then bisects
  z = t*_r(s) in logit(r).

  Args:
    x: Measurements
    sigma2: Sampling variances
    prior: Normal prior
    variance_law: Law of sigma2 on the original scale
    n_nodes: Table size (settings.U_TABLE_NODES by default)

  Returns:
    r-values in (0, 1]
  """
  n_nodes = n_nodes or settings.U_TABLE_NODES
  z, s = standardize(x, sigma2, prior)
  law = standardized_law(variance_law, prior)
  family = ThresholdFamilies.get("maxagree")

  log_odds = np.linspace(special.logit(1e-8), special.logit(1.0 - 1e-8), n_nodes)
  table = solve_u_alpha("maxagree", special.expit(log_odds), law)
  spline = interpolate.CubicSpline(log_odds, table.u)

  def excess(candidate: np.ndarray) -> np.ndarray:
    r = special.expit(candidate)
    return family.evaluate(spline(candidate), r, s) - z

  lo = np.full(z.shape, log_odds[0])
  hi = np.full(z.shape, log_odds[-1])
  above_top = excess(lo) <= 0
  below_all = excess(hi) > 0
  for _ in range(64):
    mid = 0.5 * (lo + hi)
    positive = excess(mid) > 0
    lo = np.where(positive, mid, lo)
    hi = np.where(positive, hi, mid)
  r = special.expit(0.5 * (lo + hi))
  r = np.where(above_top, special.expit(log_odds[0]), r)
  return np.where(below_all, 1.0, r)


def point_mass_rvalues(x: np.ndarray, sigma2: float, prior: NormalPrior) -> np.ndarray:
  """Analytic r-values when every unit has variance sigma2: 1 - Phi(z / sqrt(s + 1))."""
  z, s = standardize(x, sigma2, prior)
  return stats.norm.sf(z / np.sqrt(s + 1.0))


def point_mass_lambda(alpha: np.ndarray, s: float) -> np.ndarray:
  """Analytic lambda_alpha for a point-mass variance law on the standardized scale."""
  z_alpha = stats.norm.isf(np.asarray(alpha, dtype=float))
  return stats.norm.sf(z_alpha * (np.sqrt(s + 1.0) - 1.0) / np.sqrt(s))


def optimal_thresholds(alphas: np.ndarray, s_grid: np.ndarray, variance_law: VarianceLaw) -> np.ndarray:
  """t*_alpha(s) on the standardized scale, shape (len(alphas), len(s_grid))."""
  alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
  solution = solve_u_alpha("maxagree", alphas, variance_law)
  family = ThresholdFamilies.get("maxagree")
  return family.evaluate(solution.u[:, None], alphas[:, None], np.asarray(s_grid, dtype=float)[None, :])


__all__ = [
  "build_lambda_curve",
  "build_v_matrix",
  "closed_form_lambda",
  "closed_form_rvalue",
  "closed_form_rvalues",
  "default_alpha_grid",
  "gaussian_smoother",
  "grid_rvalues",
  "lambda_curve_for",
  "model_lambda_curve",
  "optimal_thresholds",
  "point_mass_lambda",
  "point_mass_rvalues",
  "solve_rvalue",
  "solve_rvalues",
]
