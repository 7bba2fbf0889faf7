"""Baseline ranking variables and their threshold-function families.

On the standardized scale (mu = 0, tau2 = 1, s = sigma2 / tau2) every
method reports unit i in its top-alpha list when z_i >= t_alpha(s_i). The
family-specific constant u_alpha calibrates each threshold so that the
marginal exceedance E_g[P(X >= t_alpha(s) | s)] equals alpha, where
X | s ~ N(0, s + 1) and g is the variance law. General (mu, tau2) thresholds
follow from mu + tau * t_alpha(sigma2 / tau2).

ThresholdFamilies.REGISTRY is the single source of truth for the families.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy import special, stats

from rankval.config import settings
from rankval.core.exceptions import BFUndefinedError, ModelMismatchError, NoBracketError
from rankval.models.priors import NormalPrior, PointMassVar, PriorSpec, ThetaLaw, VarianceLaw
from rankval.models.results import Orientation
from rankval.models.units import Dataset, PayloadKind, UnitRecord, validate_dataset
from rankval.services.tail_prob import TailModel, posterior_normal_moments

logger = logging.getLogger(__name__)

BRACKET_MAX_DOUBLINGS = 60
BISECTION_MAX_STEPS = 200

ThresholdFn = Callable[[np.ndarray, np.ndarray, np.ndarray, float], np.ndarray]


def _t_mle(u, theta, s, c):
  return u + 0.0 * s


def _t_pv(u, theta, s, c):
  return c + u * np.sqrt(s)


def _t_pm(u, theta, s, c):
  return u * (s + 1.0)


def _t_per(u, theta, s, c):
  return u * np.sqrt((s + 1.0) * (2.0 * s + 1.0))


def _t_bf(u, theta, s, c):
  return np.sqrt(s * (s + 1.0) * np.maximum(0.0, u + np.log1p(1.0 / s)))


def _t_maxagree(u, theta, s, c):
  return theta * (s + 1.0) - u * np.sqrt(s * (s + 1.0))


@dataclass(frozen=True)
class ThresholdFamily:
  """A threshold-function family on the standardized scale.

  Attributes:
    method: Method tag
    description: Ranking-variable formula in words
    threshold: Callable (u, theta_alpha, s, c) -> t
    increasing_in_u: Whether the marginal exceedance grows with u
    max_alpha: Largest alpha for which the family can meet the size constraint
  """

  method: str
  description: str
  threshold: ThresholdFn
  increasing_in_u: bool = False
  max_alpha: float = 1.0

  def evaluate(self, u, alpha, s, c: float = 0.0) -> np.ndarray:
    """Threshold values t_alpha(s) given the calibrating u."""
    theta = stats.norm.isf(np.asarray(alpha, dtype=float))
    return self.threshold(np.asarray(u, dtype=float), theta, np.asarray(s, dtype=float), c)

  def exceedance(self, u, alpha, s, c: float = 0.0) -> np.ndarray:
    """P(X >= t_alpha(s) | s) with X | s ~ N(0, s + 1)."""
    s = np.asarray(s, dtype=float)
    t = self.evaluate(u, alpha, s, c)
    return special.ndtr(-t / np.sqrt(s + 1.0))


class ThresholdFamilies:
  """Registry of the threshold-function families."""

  REGISTRY: Dict[str, ThresholdFamily] = {
    "mle": ThresholdFamily("mle", "X_i", _t_mle),
    "pv0": ThresholdFamily("pv0", "X_i / sigma_i", _t_pv),
    "pvc": ThresholdFamily("pvc", "(X_i - c) / sigma_i", _t_pv),
    "pm": ThresholdFamily("pm", "X_i / (sigma_i^2 + 1)", _t_pm),
    "per": ThresholdFamily("per", "P(theta_i <= theta | X_i, sigma_i^2)", _t_per),
    "bf": ThresholdFamily("bf", "1(X_i > 0) Bayes factor against theta_i = 0", _t_bf, max_alpha=0.5),
    "maxagree": ThresholdFamily("maxagree", "optimal agreement threshold", _t_maxagree, increasing_in_u=True),
  }

  @classmethod
  def get(cls, method: str) -> ThresholdFamily:
    """Look up a family by tag (case-insensitive)."""
    key = method.lower()
    if key not in cls.REGISTRY:
      raise ValueError(f"Unknown threshold family '{method}'. Must be one of: {', '.join(cls.REGISTRY)}")
    return cls.REGISTRY[key]

  @classmethod
  def methods(cls) -> List[str]:
    """All registered tags."""
    return list(cls.REGISTRY)


@dataclass(frozen=True, eq=False)
class USolution:
  """Calibrating constants for a family.

  Attributes:
    method: Family tag
    alphas: Alpha values
    u: u_alpha per alpha
    residual: Marginal exceedance minus alpha at the returned u
  """

  method: str
  alphas: np.ndarray
  u: np.ndarray
  residual: np.ndarray


def bisect_monotone(
  func: Callable[[np.ndarray], np.ndarray],
  size: int,
  increasing: bool,
  tol: float,
  start: float = 1.0,
) -> Tuple[np.ndarray, np.ndarray]:
  """Vectorized bracketed bisection for ``size`` independent monotone roots.

  Args:
    func: Maps a vector of candidates (one per problem) to residuals
    size: Number of independent problems
    increasing: Whether each residual increases with its argument
    tol: Residual tolerance
    start: Initial half-width of the symmetric bracket

  Returns:
    Tuple of (roots, residuals)

  Raises:
    NoBracketError: A sign change could not be found by doubling
  """
  sign = 1.0 if increasing else -1.0
  lo = np.full(size, -start)
  hi = np.full(size, start)
  f_lo = sign * func(lo)
  f_hi = sign * func(hi)
  for _ in range(BRACKET_MAX_DOUBLINGS):
    need_lo = f_lo > 0
    need_hi = f_hi < 0
    if not (need_lo.any() or need_hi.any()):
      break
    lo = np.where(need_lo, 2.0 * lo, lo)
    hi = np.where(need_hi, 2.0 * hi, hi)
    f_lo = sign * func(lo)
    f_hi = sign * func(hi)
  else:
    raise NoBracketError(
      "Could not bracket the root after repeated doubling",
      details={"lo": lo.tolist()[:5], "hi": hi.tolist()[:5]},
    )

  mid = 0.5 * (lo + hi)
  f_mid = sign * func(mid)
  for _ in range(BISECTION_MAX_STEPS):
    if np.all(np.abs(f_mid) < tol) or np.all(hi - lo < 1e-14 * np.maximum(1.0, np.abs(mid))):
      break
    go_right = f_mid < 0
    lo = np.where(go_right, mid, lo)
    hi = np.where(go_right, hi, mid)
    mid = 0.5 * (lo + hi)
    f_mid = sign * func(mid)
  return mid, sign * f_mid


def solve_u_alpha(
  method: str,
  alpha: Union[float, np.ndarray],
  variance_law: VarianceLaw,
  c: float = 0.0,
) -> USolution:
  """Solve the size constraint for a family's calibrating constant.

  Args:
    method: Family tag (mle, pv0, pvc, pm, per, bf, maxagree)
    alpha: Alpha value or vector in (0, 1)
    variance_law: Law of the standardized variance s = sigma2 / tau2
    c: Standardized benchmark for the pvc family

  Returns:
    USolution with u_alpha and the size-constraint residual per alpha

  Raises:
    NoBracketError: No u meets the constraint (e.g. bf with alpha >= 0.5)
    QuadratureFailureError: The variance-law integral did not converge

  Examples:
    >>> sol = solve_u_alpha("mle", 0.5, PointMassVar(1.0))
    >>> abs(sol.u[0]) < 1e-6
    True
  """
  family = ThresholdFamilies.get(method)
  alphas = np.atleast_1d(np.asarray(alpha, dtype=float))
  if np.any((alphas <= 0) | (alphas >= 1)):
    raise ValueError("alpha must lie in (0, 1)")
  if np.any(alphas >= family.max_alpha):
    raise NoBracketError(
      f"Family '{family.method}' cannot select more than {family.max_alpha:.0%} of units",
      details={"method": family.method, "alpha": float(alphas.max())},
    )

  def residual(u: np.ndarray) -> np.ndarray:
    mass = variance_law.expectation(lambda s: family.exceedance(u[None, :], alphas[None, :], s[:, None], c))
    return np.asarray(mass) - alphas

  u, res = bisect_monotone(residual, alphas.size, family.increasing_in_u, settings.U_ALPHA_TOL)
  worst = float(np.max(np.abs(res)))
  if worst >= settings.U_ALPHA_TOL:
    logger.warning(
      f"u_alpha for '{family.method}' met the size constraint only to {worst:.2e}",
      extra={"method": family.method},
    )
  return USolution(method=family.method, alphas=alphas, u=u, residual=res)


def standardize(x: np.ndarray, sigma2: np.ndarray, prior: NormalPrior) -> Tuple[np.ndarray, np.ndarray]:
  """Map (x, sigma2) to the standardized scale (z, s)."""
  return (np.asarray(x, dtype=float) - prior.mu) / prior.tau, np.asarray(sigma2, dtype=float) / prior.tau2


def standardized_law(variance_law: VarianceLaw, prior: NormalPrior) -> VarianceLaw:
  """Law of s = sigma2 / tau2."""
  return variance_law.scaled(1.0 / prior.tau2)


def threshold_curves(
  method: str,
  alphas: np.ndarray,
  sigma2_grid: np.ndarray,
  variance_law: VarianceLaw,
  prior: Optional[NormalPrior] = None,
  c: float = 0.0,
) -> np.ndarray:
  """Threshold values t_alpha(sigma2) for plotting.

  Args:
    method: Family tag
    alphas: Alpha values (rows)
    sigma2_grid: Variances (columns), on the original scale
    variance_law: Law of sigma2 on the original scale
    prior: Normal prior; the standardized (0, 1) prior when omitted
    c: Benchmark for pvc on the original scale

  Returns:
    Matrix of shape (len(alphas), len(sigma2_grid)) on the original scale
  """
  prior = prior or NormalPrior(0.0, 1.0)
  family = ThresholdFamilies.get(method)
  alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
  s = np.asarray(sigma2_grid, dtype=float) / prior.tau2
  c_std = (c - prior.mu) / prior.tau
  solution = solve_u_alpha(method, alphas, standardized_law(variance_law, prior), c=c_std)
  t = family.evaluate(solution.u[:, None], alphas[:, None], s[None, :], c_std)
  return prior.mu + prior.tau * t


def curves_frame(
  methods: List[str],
  alphas: np.ndarray,
  sigma2_grid: np.ndarray,
  variance_law: VarianceLaw,
  prior: Optional[NormalPrior] = None,
  c: float = 0.0,
) -> pd.DataFrame:
  """Long-format threshold curves: method, alpha, sigma2, threshold."""
  frames = []
  for method in methods:
    matrix = threshold_curves(method, alphas, sigma2_grid, variance_law, prior=prior, c=c)
    alpha_col, sigma_col = np.meshgrid(np.atleast_1d(alphas), sigma2_grid, indexing="ij")
    frames.append(pd.DataFrame({
      "method": method,
      "alpha": alpha_col.ravel(),
      "sigma2": sigma_col.ravel(),
      "threshold": matrix.ravel(),
    }))
  return pd.concat(frames, ignore_index=True)


def exceedance_fractions(
  z: np.ndarray,
  s: np.ndarray,
  method: str,
  alphas: np.ndarray,
  variance_law: VarianceLaw,
  c: float = 0.0,
) -> np.ndarray:
  """Fraction of standardized units with z >= t_alpha(s), per alpha.

  Args:
    z: Standardized measurements
    s: Standardized variances
    method: Family tag
    alphas: Alpha values
    variance_law: Law of s used to calibrate u_alpha
    c: Standardized benchmark for pvc

  Returns:
    Exceedance fraction per alpha
  """
  family = ThresholdFamilies.get(method)
  alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
  solution = solve_u_alpha(method, alphas, variance_law, c=c)
  fractions = np.empty(alphas.size)
  for j, (alpha, u) in enumerate(zip(alphas, solution.u)):
    fractions[j] = float(np.mean(z >= family.evaluate(u, alpha, s, c)))
  return fractions


# ============================================================================
# Ranking variables
# ============================================================================

RANKING_METHODS: Dict[str, Orientation] = {
  "mle": Orientation.LARGER_IS_BETTER,
  "pm": Orientation.LARGER_IS_BETTER,
  "per": Orientation.SMALLER_IS_BETTER,
  "pvalue": Orientation.SMALLER_IS_BETTER,
  "pv": Orientation.LARGER_IS_BETTER,
  "bf": Orientation.LARGER_IS_BETTER,
}


def normal_log_bayes_factor(x: np.ndarray, sigma2: np.ndarray, prior: NormalPrior) -> np.ndarray:
  """One-sided log Bayes factor of theta ~ prior against theta = 0; -inf where x <= 0."""
  x = np.asarray(x, dtype=float)
  sigma2 = np.asarray(sigma2, dtype=float)
  alt = stats.norm.logpdf(x, prior.mu, np.sqrt(prior.tau2 + sigma2))
  null = stats.norm.logpdf(x, 0.0, np.sqrt(sigma2))
  return np.where(x > 0, alt - null, -np.inf)


def binomial_pvalues(y: np.ndarray, n: np.ndarray, rate: Optional[float] = None) -> np.ndarray:
  """One-sided upper binomial p-values P(Y >= y) against the pooled rate."""
  y = np.asarray(y)
  n = np.asarray(n)
  p0 = float(y.sum() / n.sum()) if rate is None else rate
  return stats.binom.sf(y - 1, n, p0)


def ranking_variables(
  dataset: Dataset,
  prior: Union[ThetaLaw, PriorSpec],
  method: str,
  pvalue_c: float = 0.0,
  pvalue_rate: Optional[float] = None,
) -> Tuple[np.ndarray, Orientation]:
  """Compute one baseline ranking variable for every unit.

  Args:
    dataset: Validated dataset
    prior: Theta law (or PriorSpec)
    method: mle, pm, per, pvalue, pv or bf
    pvalue_c: Benchmark null for normal p-values and PV statistics
    pvalue_rate: Null success rate for binomial p-values (pooled rate when omitted)

  Returns:
    Tuple of (values, orientation)

  Raises:
    BFUndefinedError: bf requested for non-normal data
    ModelMismatchError: pvalue or pv requested for posterior draws
  """
  key = method.lower()
  if key not in RANKING_METHODS:
    raise ValueError(f"Unknown ranking method '{method}'. Must be one of: {', '.join(RANKING_METHODS)}")
  model = TailModel(dataset, prior)
  law = model.prior

  if key == "mle":
    values = model.mle()
  elif key == "pm":
    values = model.posterior_mean()
  elif key == "per":
    values = model.per()
  elif key == "bf":
    if dataset.kind is not PayloadKind.NORMAL:
      raise BFUndefinedError(dataset.kind.value)
    values = normal_log_bayes_factor(dataset.x, dataset.sigma2, law)
  elif dataset.kind is PayloadKind.NORMAL:
    statistic = (dataset.x - pvalue_c) / np.sqrt(dataset.sigma2)
    values = statistic if key == "pv" else special.ndtr(-statistic)
  elif dataset.kind is PayloadKind.BINOMIAL and key == "pvalue":
    values = binomial_pvalues(dataset.y, dataset.n, pvalue_rate)
  else:
    raise ModelMismatchError(dataset.kind.value, key)
  return np.asarray(values, dtype=float), RANKING_METHODS[key]


def ranking_variable(method: str, unit: UnitRecord, prior: Union[ThetaLaw, PriorSpec], pvalue_c: float = 0.0) -> float:
  """Ranking variable of a single unit.

  Examples:
    >>> from rankval.models.units import BinomialObs
    >>> from rankval.models.priors import BetaPrior
    >>> unit = UnitRecord(id="p", payload=BinomialObs(y=59, n=62))
    >>> round(ranking_variable("mle", unit, BetaPrior(15.12, 5.38)), 3)
    0.952
  """
  values, _ = ranking_variables(validate_dataset([unit]), prior, method, pvalue_c=pvalue_c)
  return float(values[0])


def per_threshold_disagreement(
  z: np.ndarray,
  s: np.ndarray,
  alphas: np.ndarray,
  variance_law: VarianceLaw,
) -> np.ndarray:
  """Count units whose top-alpha membership differs between PER ranking and the PER threshold formula.

  Membership by PER uses the definition P(theta_i <= theta | z_i, s_i) on the
  standardized scale; membership by formula uses z >= u * sqrt((s + 1)(2s + 1)).
  A nonzero count is logged as a warning.
  """
  prior = NormalPrior(0.0, 1.0)
  mean, var = posterior_normal_moments(z, s, prior)
  per = special.ndtr(-mean / np.sqrt(1.0 + var))
  solution = solve_u_alpha("per", alphas, variance_law)
  family = ThresholdFamilies.get("per")
  counts = np.empty(solution.alphas.size, dtype=np.int64)
  for j, (alpha, u) in enumerate(zip(solution.alphas, solution.u)):
    by_formula = z >= family.evaluate(u, alpha, s)
    by_definition = per <= special.ndtr(-u)
    counts[j] = int(np.sum(by_formula != by_definition))
  if counts.any():
    logger.warning(
      "PER threshold formula disagrees with PER ranking",
      extra={"alphas": solution.alphas.tolist(), "disagreements": counts.tolist()},
    )
  return counts
