"""Empirical-Bayes estimation of population laws by marginal maximum likelihood.

Fits provided:
- fit_beta_binomial: Beta(a, b) prior for binomial data
- fit_normal_normal: Normal(mu, tau2) prior for normal data
- fit_variance_law: Gamma / inverse-gamma / empirical law of the sampling variances
- empirical_prior_from_draws: EmpiricalPrior from pooled or external draws

Optimizers run in unconstrained log-parameter space from a method-of-moments
start, followed by a Newton polish with the analytic Hessian. Every fit is a
deterministic function of the data and settings.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
from scipy import optimize, special

from rankval.config import settings
from rankval.core.exceptions import DegenerateDataError, ModelMismatchError, NonConvergenceError
from rankval.models.priors import (
  BetaPrior,
  EmpiricalPrior,
  EmpiricalVar,
  GammaVar,
  InvGammaVar,
  NormalPrior,
  PointMassVar,
  VarianceLaw,
)
from rankval.models.units import Dataset, PayloadKind

logger = logging.getLogger(__name__)

LOG_PARAM_BOUND = 30.0
NEWTON_MAX_STEPS = 25
TAU2_FLOOR_FRACTION = 1e-10
VARIANCE_FAMILIES = ("gamma", "invgamma", "empirical")
GAMMA_SHAPE_CAP = 1e8
LOG_SHAPE_FLOOR = 200.0


@dataclass
class PriorFit:
  """Outcome of a marginal maximum-likelihood fit.

  Attributes:
    prior: Fitted law (theta prior or variance law)
    loglik: Log-likelihood at the reported point
    converged: Whether the gradient tolerance was met
    iterations: Optimizer iterations used
    grad_norm: Gradient norm in the optimizer's coordinates at the reported point
    std_errors: Asymptotic standard errors of the natural parameters
    boundary: True when a variance parameter sits on the boundary
    n_units: Number of units fitted
    data_hash: Fingerprint of the data
    start: Method-of-moments starting point
  """

  prior: object
  loglik: float
  converged: bool
  iterations: int = 0
  grad_norm: float = 0.0
  std_errors: Dict[str, float] = field(default_factory=dict)
  boundary: bool = False
  n_units: int = 0
  data_hash: str = ""
  start: Dict[str, float] = field(default_factory=dict)


def _newton_polish(
  point: np.ndarray,
  grad_fn: Callable[[np.ndarray], np.ndarray],
  hess_fn: Callable[[np.ndarray], np.ndarray],
  value_fn: Callable[[np.ndarray], float],
  gtol: float,
) -> Tuple[np.ndarray, int]:
  """Refine a minimizer with damped Newton steps while the Hessian is positive definite."""
  steps = 0
  for steps in range(1, NEWTON_MAX_STEPS + 1):
    grad = grad_fn(point)
    if np.linalg.norm(grad) < gtol:
      return point, steps - 1
    hess = hess_fn(point)
    try:
      np.linalg.cholesky(hess)
    except np.linalg.LinAlgError:
      break
    direction = -np.linalg.solve(hess, grad)
    current = value_fn(point)
    step = 1.0
    while step > 1e-8:
      candidate = np.clip(point + step * direction, -LOG_PARAM_BOUND, LOG_PARAM_BOUND)
      if value_fn(candidate) <= current + 1e-12 * max(1.0, abs(current)):
        point = candidate
        break
      step *= 0.5
    else:
      break
  return point, steps


# ============================================================================
# Beta-binomial
# ============================================================================

def _beta_binomial_terms(y: np.ndarray, n: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
  """Collapse repeated (y, n) pairs into unique pairs with multiplicities."""
  pairs, counts = np.unique(np.stack([y, n], axis=1), axis=0, return_counts=True)
  return pairs[:, 0].astype(float), pairs[:, 1].astype(float), counts.astype(float)


def beta_binomial_loglik(a: float, b: float, y: np.ndarray, n: np.ndarray) -> float:
  """Sum of log beta-binomial marginal likelihoods including binomial coefficients."""
  y = np.asarray(y, dtype=float)
  n = np.asarray(n, dtype=float)
  log_choose = special.gammaln(n + 1) - special.gammaln(y + 1) - special.gammaln(n - y + 1)
  return float(np.sum(log_choose + special.betaln(a + y, b + n - y) - special.betaln(a, b)))


def _beta_binomial_start(y: np.ndarray, n: np.ndarray) -> Tuple[float, float]:
  p = y / n
  mean = float(np.clip(p.mean(), 1e-3, 1 - 1e-3))
  var = float(p.var())
  common = mean * (1 - mean) / var - 1.0 if var > 0 else 2.0
  if not np.isfinite(common) or common <= 0:
    common = 2.0
  return mean * common, (1 - mean) * common


def fit_beta_binomial(dataset: Dataset) -> PriorFit:
  """Fit a Beta(a, b) prior to binomial data by marginal maximum likelihood.

  Args:
    dataset: Validated binomial dataset

  Returns:
    PriorFit whose ``prior`` is a BetaPrior

  Raises:
    ModelMismatchError: Dataset is not binomial
    DegenerateDataError: Fewer than two units, or all y = 0, or all y = n
  """
  if dataset.kind is not PayloadKind.BINOMIAL:
    raise ModelMismatchError(dataset.kind.value, "beta")
  y = dataset.y.astype(float)
  n = dataset.n.astype(float)
  if len(y) < 2:
    raise DegenerateDataError("Beta-binomial fit needs at least two units", details={"units": len(y)})
  if np.all(y == 0) or np.all(y == n):
    raise DegenerateDataError(
      "Beta-binomial fit is undefined when every unit has y = 0 or every unit has y = n",
      details={"units": len(y)},
    )

  uy, un, w = _beta_binomial_terms(dataset.y, dataset.n)

  def unpack(theta: np.ndarray) -> Tuple[float, float]:
    return float(np.exp(theta[0])), float(np.exp(theta[1]))

  def nll(theta: np.ndarray) -> float:
    a, b = unpack(theta)
    return -float(np.sum(w * (special.betaln(a + uy, b + un - uy) - special.betaln(a, b))))

  def natural_grad(a: float, b: float) -> np.ndarray:
    common = special.digamma(a + b) - special.digamma(a + b + un)
    da = np.sum(w * (special.digamma(a + uy) - special.digamma(a) + common))
    db = np.sum(w * (special.digamma(b + un - uy) - special.digamma(b) + common))
    return np.array([da, db])

  def grad(theta: np.ndarray) -> np.ndarray:
    a, b = unpack(theta)
    return -natural_grad(a, b) * np.array([a, b])

  def natural_hess(a: float, b: float) -> np.ndarray:
    common = special.polygamma(1, a + b) - special.polygamma(1, a + b + un)
    haa = np.sum(w * (special.polygamma(1, a + uy) - special.polygamma(1, a) + common))
    hbb = np.sum(w * (special.polygamma(1, b + un - uy) - special.polygamma(1, b) + common))
    hab = np.sum(w * common)
    return np.array([[haa, hab], [hab, hbb]])

  def hess(theta: np.ndarray) -> np.ndarray:
    a, b = unpack(theta)
    scale = np.array([a, b])
    h = natural_hess(a, b) * np.outer(scale, scale) + np.diag(natural_grad(a, b) * scale)
    return -h

  a0, b0 = _beta_binomial_start(y, n)
  start = np.log([a0, b0])
  result = optimize.minimize(
    nll,
    start,
    jac=grad,
    method="L-BFGS-B",
    bounds=[(-LOG_PARAM_BOUND, LOG_PARAM_BOUND)] * 2,
    options={"gtol": settings.FIT_GTOL, "maxiter": settings.FIT_MAX_ITER},
  )
  point, polish_steps = _newton_polish(np.asarray(result.x), grad, hess, nll, settings.FIT_GTOL)
  if nll(point) > nll(start):
    point = start
  grad_norm = float(np.linalg.norm(grad(point)))
  converged = grad_norm < settings.FIT_GTOL
  a, b = unpack(point)
  if not (np.isfinite(a) and np.isfinite(b)):
    raise NonConvergenceError("fit_beta_binomial", details={"a": a, "b": b})
  if not converged:
    logger.warning(
      f"Beta-binomial fit stopped with gradient norm {grad_norm:.3g}",
      extra={"a": a, "b": b, "iterations": int(result.nit)},
    )

  std_errors = _standard_errors(-natural_hess(a, b), ("a", "b"))
  fit = PriorFit(
    prior=BetaPrior(a=a, b=b),
    loglik=beta_binomial_loglik(a, b, y, n),
    converged=converged,
    iterations=int(result.nit) + polish_steps,
    grad_norm=grad_norm,
    std_errors=std_errors,
    n_units=len(y),
    data_hash=dataset.data_hash(),
    start={"a": a0, "b": b0},
  )
  logger.info(
    f"Fitted Beta({a:.4g}, {b:.4g}) to {len(y)} units",
    extra={"loglik": fit.loglik, "converged": converged, "grad_norm": grad_norm},
  )
  return fit


def _standard_errors(information: np.ndarray, names: Tuple[str, ...]) -> Dict[str, float]:
  """Square roots of the diagonal of the inverse observed information."""
  try:
    np.linalg.cholesky(information)
    cov = np.linalg.inv(information)
    return {name: float(np.sqrt(cov[i, i])) for i, name in enumerate(names)}
  except np.linalg.LinAlgError:
    return {name: float("nan") for name in names}


# ============================================================================
# Normal-normal
# ============================================================================

def normal_marginal_loglik(mu: float, tau2: float, x: np.ndarray, sigma2: np.ndarray) -> float:
  """Log-likelihood of x_i ~ Normal(mu, tau2 + sigma2_i)."""
  v = tau2 + np.asarray(sigma2, dtype=float)
  r = np.asarray(x, dtype=float) - mu
  return float(-0.5 * np.sum(np.log(2 * np.pi * v) + r ** 2 / v))


def normal_marginal_mle(x: np.ndarray, sigma2: np.ndarray, data_hash: str = "") -> PriorFit:
  """Marginal ML for (mu, tau2) from measurements and known variances.

  Zero sampling variances are allowed here (the model then collapses to a
  plain normal sample), which ``fit_normal_normal`` cannot express through
  validated units.

  Args:
    x: Measurements
    sigma2: Known sampling variances (>= 0)
    data_hash: Optional fingerprint recorded on the result

  Returns:
    PriorFit whose ``prior`` is a NormalPrior

  Raises:
    DegenerateDataError: Fewer than two units or all measurements identical
  """
  x = np.asarray(x, dtype=float)
  sigma2 = np.asarray(sigma2, dtype=float)
  if x.size < 2:
    raise DegenerateDataError("Normal-normal fit needs at least two units", details={"units": int(x.size)})
  if np.ptp(x) == 0:
    raise DegenerateDataError(
      "All measurements are identical; tau2 would sit on the boundary",
      details={"units": int(x.size), "x": float(x[0])},
    )

  center = float(x.mean())
  scale = float(x.std())
  xs = (x - center) / scale
  ss = sigma2 / scale ** 2
  floor = TAU2_FLOOR_FRACTION * max(float(ss.mean()), 1.0)

  def nll(theta: np.ndarray) -> float:
    return -normal_marginal_loglik(theta[0], float(np.exp(theta[1])), xs, ss)

  def grad(theta: np.ndarray) -> np.ndarray:
    t = float(np.exp(theta[1]))
    v = t + ss
    r = xs - theta[0]
    return np.array([-np.sum(r / v), t * 0.5 * np.sum(1.0 / v - r ** 2 / v ** 2)])

  def hess(theta: np.ndarray) -> np.ndarray:
    t = float(np.exp(theta[1]))
    v = t + ss
    r = xs - theta[0]
    g_t = 0.5 * np.sum(1.0 / v - r ** 2 / v ** 2)
    h_mm = np.sum(1.0 / v)
    h_mt = np.sum(r / v ** 2)
    h_tt = np.sum(r ** 2 / v ** 3 - 0.5 / v ** 2)
    return np.array([[h_mm, t * h_mt], [t * h_mt, t ** 2 * h_tt + t * g_t]])

  mom_tau2 = max(1.0 - float(ss.mean()), 1e-3)
  start = np.array([0.0, np.log(mom_tau2)])
  result = optimize.minimize(
    nll,
    start,
    jac=grad,
    method="BFGS",
    options={"gtol": settings.FIT_GTOL, "maxiter": settings.FIT_MAX_ITER},
  )
  point = np.asarray(result.x)
  polish_steps = 0
  if np.all(np.isfinite(point)):
    point, polish_steps = _newton_polish(point, grad, hess, nll, settings.FIT_GTOL)
  if not np.all(np.isfinite(point)) or nll(point) > nll(start):
    point = start

  mu_s = float(point[0])
  tau2_s = float(np.exp(point[1]))

  # Score in tau2 at zero, evaluated at the weighted mean for tau2 = 0.
  boundary = False
  if np.all(ss > 0):
    w0 = 1.0 / ss
    mu0 = float(np.sum(w0 * xs) / np.sum(w0))
    score0 = 0.5 * float(np.sum((xs - mu0) ** 2 / ss ** 2 - 1.0 / ss))
    at_zero = -normal_marginal_loglik(mu0, 0.0, xs, ss)
    if score0 <= 0 and at_zero <= nll(point) + 1e-12:
      boundary = True
      mu_s, tau2_s = mu0, 0.0
  if tau2_s < floor:
    boundary = True
  if boundary:
    tau2_s = floor
    logger.warning(
      "Marginal likelihood is maximized at tau2 = 0; prior variance clamped and flagged",
      extra={"units": int(x.size)},
    )

  grad_norm = float(np.linalg.norm(grad(np.array([mu_s, np.log(tau2_s)]))))
  converged = boundary or grad_norm < settings.FIT_GTOL
  if not converged:
    logger.warning(
      f"Normal-normal fit stopped with gradient norm {grad_norm:.3g}",
      extra={"iterations": int(result.nit)},
    )

  mu = center + scale * mu_s
  tau2 = tau2_s * scale ** 2
  v = tau2 + sigma2
  r = x - mu
  info = np.array([
    [np.sum(1.0 / v), np.sum(r / v ** 2)],
    [np.sum(r / v ** 2), np.sum(r ** 2 / v ** 3 - 0.5 / v ** 2)],
  ])
  std_errors = {"mu": float("nan"), "tau2": float("nan")} if boundary else _standard_errors(info, ("mu", "tau2"))

  fit = PriorFit(
    prior=NormalPrior(mu=mu, tau2=tau2),
    loglik=normal_marginal_loglik(mu, tau2, x, sigma2),
    converged=converged,
    iterations=int(result.nit) + polish_steps,
    grad_norm=grad_norm,
    std_errors=std_errors,
    boundary=boundary,
    n_units=int(x.size),
    data_hash=data_hash,
    start={"mu": center, "tau2": mom_tau2 * scale ** 2},
  )
  logger.info(
    f"Fitted Normal(mu={mu:.4g}, tau2={tau2:.4g}) to {x.size} units",
    extra={"loglik": fit.loglik, "boundary": boundary, "converged": converged},
  )
  return fit


def fit_normal_normal(dataset: Dataset) -> PriorFit:
  """Fit a Normal(mu, tau2) prior to normal data by marginal maximum likelihood.

  Args:
    dataset: Validated normal dataset

  Returns:
    PriorFit whose ``prior`` is a NormalPrior; ``boundary`` flags tau2 at zero

  Raises:
    ModelMismatchError: Dataset is not normal
    DegenerateDataError: Fewer than two units or all x identical
  """
  if dataset.kind is not PayloadKind.NORMAL:
    raise ModelMismatchError(dataset.kind.value, "normal")
  return normal_marginal_mle(dataset.x, dataset.sigma2, data_hash=dataset.data_hash())


# ============================================================================
# Variance law
# ============================================================================

def _gamma_shape_mle(values: np.ndarray) -> Optional[Tuple[float, float]]:
  """Gamma ML by the profile score log k - digamma(k) = log(mean) - mean(log).

  Returns None when the shape would exceed GAMMA_SHAPE_CAP, i.e. the values
  are constant to within what a gamma law can resolve.

  Raises:
    NonConvergenceError: No sign change of the score could be bracketed
  """
  mean = float(values.mean())
  target = float(-np.mean(np.log1p(values / mean - 1.0)))

  def score(log_k: float) -> float:
    k = np.exp(log_k)
    return float(np.log(k) - special.digamma(k) - target)

  hi = float(np.log(GAMMA_SHAPE_CAP))
  if not target > 0 or score(hi) > 0:
    return None
  lo = -20.0
  while score(lo) <= 0:
    lo -= 20.0
    if lo < -LOG_SHAPE_FLOOR:
      raise NonConvergenceError("fit_variance_law", details={"reason": "no bracket", "target": target})

  root, report = optimize.brentq(score, lo, hi, xtol=1e-12, full_output=True, disp=False)
  if not report.converged:
    raise NonConvergenceError("fit_variance_law", details={"iterations": report.iterations})
  shape = float(np.exp(root))
  return shape, shape / mean


def _point_mass_fit(values: np.ndarray, data_hash: str, reason: str) -> PriorFit:
  """PointMassVar at the mean of the variances, with a warning naming the reason."""
  level = float(values.mean())
  logger.warning(
    f"{reason}; using a point-mass variance law at {level:.6g}",
    extra={"units": int(values.size)},
  )
  return PriorFit(prior=PointMassVar(level), loglik=0.0, converged=True, n_units=int(values.size), data_hash=data_hash)


def fit_variance_law(data: Union[Dataset, np.ndarray], family: str = "gamma") -> PriorFit:
  """Fit the law of the sampling variances by maximum likelihood.

  Args:
    data: Normal dataset, or a vector of positive variances
    family: "gamma", "invgamma" or "empirical"

  Returns:
    PriorFit whose ``prior`` is a variance law; constant input yields PointMassVar

  Raises:
    ModelMismatchError: Dataset is not normal
    ValueError: Unknown family
    NonConvergenceError: The shape equation could not be solved
  """
  if isinstance(data, Dataset):
    if data.kind is not PayloadKind.NORMAL:
      raise ModelMismatchError(data.kind.value, family)
    values = np.asarray(data.sigma2, dtype=float)
    data_hash = data.data_hash()
  else:
    values = np.asarray(data, dtype=float).ravel()
    data_hash = ""
  family = family.lower()
  if family not in VARIANCE_FAMILIES:
    raise ValueError(f"Invalid variance family '{family}'. Must be one of: {', '.join(VARIANCE_FAMILIES)}")
  if values.size == 0 or np.any(values <= 0) or not np.all(np.isfinite(values)):
    raise DegenerateDataError("Variance-law fit needs positive finite variances")

  if np.ptp(values) <= 1e-12 * float(values.max()):
    return _point_mass_fit(values, data_hash, "All sampling variances are equal")

  law: VarianceLaw
  if family == "empirical":
    law = EmpiricalVar(values)
    loglik = 0.0
  else:
    fitted = _gamma_shape_mle(values if family == "gamma" else 1.0 / values)
    if fitted is None:
      return _point_mass_fit(values, data_hash, f"Sampling variances too concentrated for a {family} law")
    shape, rate = fitted
    law = GammaVar(shape=shape, rate=rate) if family == "gamma" else InvGammaVar(shape=shape, scale=rate)
    loglik = float(np.sum(np.log(law.pdf(values))))

  logger.info(
    f"Fitted {family} variance law to {values.size} variances",
    extra={"params": law.params(), "loglik": loglik},
  )
  return PriorFit(prior=law, loglik=loglik, converged=True, n_units=int(values.size), data_hash=data_hash)


# ============================================================================
# Empirical prior
# ============================================================================

def empirical_prior_from_draws(draws: Union[Dataset, np.ndarray]) -> EmpiricalPrior:
  """Build an EmpiricalPrior from pooled posterior draws or external prior draws.

  Args:
    draws: Draws dataset (all units pooled) or any array of draws

  Returns:
    EmpiricalPrior over the sorted draws

  Raises:
    TooFewDrawsError: Fewer than settings.MIN_PRIOR_DRAWS draws
  """
  if isinstance(draws, Dataset):
    if draws.kind is not PayloadKind.DRAWS:
      raise ModelMismatchError(draws.kind.value, "empirical")
    pooled = np.concatenate(draws.draws)
  else:
    pooled = np.asarray(draws, dtype=float).ravel()
  prior = EmpiricalPrior(pooled)
  logger.info(f"Built empirical prior from {pooled.size} draws", extra=prior.params())
  return prior
