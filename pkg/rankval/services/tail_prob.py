"""Posterior tail probabilities V_alpha(D_i) = P(theta_i >= theta_alpha | D_i).

Scalar kernels (tail_normal, tail_beta_binomial, tail_from_draws) broadcast
over numpy arrays. TailProbFn binds one unit to a prior; TailModel binds a
whole dataset and evaluates blocks of units at once, which is what the
r-value engine and the baseline rankers consume.
"""

import logging
from typing import Optional, Union

import numpy as np
from scipy import integrate, special

from rankval.config import settings
from rankval.core.concurrency import map_blocks
from rankval.core.exceptions import ModelMismatchError, ThetaOutOfRangeError
from rankval.models.priors import BetaPrior, EmpiricalPrior, NormalPrior, PriorSpec, ThetaLaw
from rankval.models.units import (
  BinomialObs,
  Dataset,
  NormalObs,
  PayloadKind,
  PosteriorDraws,
  UnitRecord,
)

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

COMPATIBLE_PRIORS = {
  PayloadKind.NORMAL: (NormalPrior,),
  PayloadKind.BINOMIAL: (BetaPrior,),
  PayloadKind.DRAWS: (NormalPrior, BetaPrior, EmpiricalPrior),
}


def _as_result(values: np.ndarray, *inputs) -> ArrayLike:
  if all(np.ndim(v) == 0 for v in inputs):
    return float(values)
  return values


def posterior_normal_moments(x: ArrayLike, sigma2: ArrayLike, prior: NormalPrior):
  """Posterior mean and variance of theta given x ~ N(theta, sigma2), theta ~ prior."""
  x = np.asarray(x, dtype=float)
  sigma2 = np.asarray(sigma2, dtype=float)
  denom = sigma2 + prior.tau2
  mean = (x * prior.tau2 + prior.mu * sigma2) / denom
  var = sigma2 * prior.tau2 / denom
  return mean, var


def tail_normal(x: ArrayLike, sigma2: ArrayLike, prior: NormalPrior, theta: ArrayLike) -> ArrayLike:
  """P(theta_i >= theta | x, sigma2) under a normal prior.

  Args:
    x: Measurement(s)
    sigma2: Sampling variance(s), positive
    prior: Normal prior
    theta: Threshold(s); broadcasts against x and sigma2

  Returns:
    Tail probability in [0, 1]

  Examples:
    >>> round(tail_normal(1.0, 1.0, NormalPrior(0.0, 1.0), 0.0), 4)
    0.7602
  """
  mean, var = posterior_normal_moments(x, sigma2, prior)
  values = special.ndtr((mean - np.asarray(theta, dtype=float)) / np.sqrt(var))
  return _as_result(values, x, sigma2, theta)


def tail_beta_binomial(
  y: ArrayLike,
  n: ArrayLike,
  prior: BetaPrior,
  theta: ArrayLike,
  strict: bool = False,
) -> ArrayLike:
  """P(theta_i >= theta) for theta_i ~ Beta(a + y, b + n - y).

  Thresholds at or below 0 give 1 and at or above 1 give 0; these are
  logged, or raised when ``strict`` is set.

  Args:
    y: Successes
    n: Trials
    prior: Beta prior
    theta: Threshold(s) in (0, 1)
    strict: Raise ThetaOutOfRangeError instead of clamping

  Returns:
    Upper tail probability via the regularized incomplete beta function
  """
  t = np.asarray(theta, dtype=float)
  outside = (t <= 0) | (t >= 1)
  if np.any(outside):
    bad = float(np.atleast_1d(t)[np.atleast_1d(outside)][0])
    if strict:
      raise ThetaOutOfRangeError(bad)
    logger.warning(f"Beta threshold {bad} outside (0, 1); using the support limit", extra={"theta": bad})
  y = np.asarray(y, dtype=float)
  n = np.asarray(n, dtype=float)
  inner = np.clip(t, 0.0, 1.0)
  values = special.betainc(prior.b + n - y, prior.a + y, 1.0 - inner)
  values = np.where(t <= 0, 1.0, np.where(t >= 1, 0.0, values))
  return _as_result(values, y, n, theta)


def tail_from_draws(draws: np.ndarray, theta: ArrayLike, presorted: bool = False) -> ArrayLike:
  """Fraction of posterior draws at or above theta.

  Args:
    draws: Posterior draws of one unit
    theta: Threshold(s)
    presorted: Skip sorting when draws are already ascending

  Returns:
    Value(s) in {0, 1/m, ..., 1}

  Examples:
    >>> tail_from_draws(np.array([1.0, 2.0, 3.0, 4.0]), 2.5)
    0.5
  """
  values = np.asarray(draws, dtype=float)
  if not presorted:
    values = np.sort(values)
  if values.size < settings.MIN_POSTERIOR_DRAWS:
    logger.warning(
      f"Tail probability from {values.size} draws (< {settings.MIN_POSTERIOR_DRAWS})",
      extra={"draws": int(values.size)},
    )
  t = np.asarray(theta, dtype=float)
  counts = values.size - np.searchsorted(values, t, side="left")
  result = counts / values.size
  return float(result) if np.ndim(theta) == 0 else result


def check_compatible(kind: PayloadKind, theta_law: ThetaLaw) -> None:
  """Raise ModelMismatchError unless the payload kind and prior family pair up."""
  if not isinstance(theta_law, COMPATIBLE_PRIORS[kind]):
    raise ModelMismatchError(kind.value, theta_law.family)


class TailProbFn:
  """Tail probability function of one unit under a fixed prior.

  Attributes:
    unit: The unit record
    prior: Population law of theta
  """

  def __init__(self, unit: UnitRecord, prior: Union[ThetaLaw, PriorSpec]):
    """Bind a unit to a prior after checking that the pair is supported."""
    self.unit = unit
    self.prior = prior.theta_law if isinstance(prior, PriorSpec) else prior
    check_compatible(PayloadKind(unit.payload.kind), self.prior)
    if isinstance(unit.payload, PosteriorDraws):
      self._sorted = np.sort(np.asarray(unit.payload.draws, dtype=float))

  def evaluate_at_theta(self, theta: ArrayLike) -> ArrayLike:
    """Return P(theta_i >= theta | D_i)."""
    payload = self.unit.payload
    if isinstance(payload, NormalObs):
      return tail_normal(payload.x, payload.sigma2, self.prior, theta)
    if isinstance(payload, BinomialObs):
      return tail_beta_binomial(payload.y, payload.n, self.prior, theta)
    return tail_from_draws(self._sorted, theta, presorted=True)

  def evaluate(self, alpha: ArrayLike) -> ArrayLike:
    """Return V_alpha(D_i) = P(theta_i >= theta_alpha | D_i)."""
    return self.evaluate_at_theta(self.prior.upper_quantile(alpha))

  def __call__(self, alpha: ArrayLike) -> ArrayLike:
    """Alias for evaluate."""
    return self.evaluate(alpha)


def per_integral(tailprob: TailProbFn, n_nodes: Optional[int] = None) -> float:
  """Posterior expected relative rank 1 - integral of V_alpha over (0, 1).

  The integrand is evaluated at interior nodes of a uniform grid and the
  end values are carried flat to alpha = 0 and alpha = 1.

  Args:
    tailprob: Unit tail function
    n_nodes: Grid nodes including both ends (>= 201); defaults to settings.PER_GRID_NODES

  Returns:
    P(theta_i <= theta | D_i) for theta drawn from the prior; 0 is the top
  """
  nodes = _per_nodes(n_nodes)
  values = np.asarray(tailprob.evaluate(nodes[1:-1]), dtype=float)
  return float(1.0 - integrate.trapezoid(np.concatenate([[values[0]], values, [values[-1]]]), nodes))


def _per_nodes(n_nodes: Optional[int]) -> np.ndarray:
  count = n_nodes or settings.PER_GRID_NODES
  if count < 201:
    raise ValueError("PER quadrature needs at least 201 nodes")
  return np.linspace(0.0, 1.0, count)


def posterior_mean(unit: UnitRecord, prior: Union[ThetaLaw, PriorSpec]) -> float:
  """E(theta_i | D_i): conjugate formula, or the draw average for draws.

  Examples:
    >>> unit = UnitRecord(id="a", payload=BinomialObs(y=125, n=133))
    >>> round(posterior_mean(unit, BetaPrior(15.12, 5.38)), 3)
    0.913
  """
  law = prior.theta_law if isinstance(prior, PriorSpec) else prior
  payload = unit.payload
  check_compatible(PayloadKind(payload.kind), law)
  if isinstance(payload, NormalObs):
    mean, _ = posterior_normal_moments(payload.x, payload.sigma2, law)
    return float(mean)
  if isinstance(payload, BinomialObs):
    return (payload.y + law.a) / (payload.n + law.a + law.b)
  return float(np.mean(payload.draws))


class TailModel:
  """Vectorized tail probabilities for a whole dataset under one prior.

  Attributes:
    dataset: Validated dataset
    prior: Population law of theta
  """

  def __init__(self, dataset: Dataset, prior: Union[ThetaLaw, PriorSpec]):
    """Bind the dataset to the prior after a compatibility check."""
    self.dataset = dataset
    self.prior = prior.theta_law if isinstance(prior, PriorSpec) else prior
    check_compatible(dataset.kind, self.prior)

  def __len__(self) -> int:
    """Number of units."""
    return len(self.dataset)

  def unit_fn(self, index: int) -> TailProbFn:
    """TailProbFn for one unit."""
    return TailProbFn(self.dataset.unit(index), self.prior)

  def block_at_theta(self, start: int, stop: int, thetas: np.ndarray) -> np.ndarray:
    """Tail probabilities of units [start, stop) at each threshold, shape (rows, len(thetas))."""
    ds = self.dataset
    thetas = np.asarray(thetas, dtype=float)
    if ds.kind is PayloadKind.NORMAL:
      return tail_normal(ds.x[start:stop, None], ds.sigma2[start:stop, None], self.prior, thetas[None, :])
    if ds.kind is PayloadKind.BINOMIAL:
      return tail_beta_binomial(ds.y[start:stop, None], ds.n[start:stop, None], self.prior, thetas[None, :])
    block = np.empty((stop - start, thetas.size))
    for row, draws in enumerate(ds.draws[start:stop]):
      block[row] = draws.size - np.searchsorted(draws, thetas, side="left")
      block[row] /= draws.size
    return block

  def pointwise(self, rows: np.ndarray, alphas: np.ndarray) -> np.ndarray:
    """V_{alphas[k]} of unit rows[k], elementwise."""
    ds = self.dataset
    rows = np.asarray(rows, dtype=np.int64)
    thetas = np.atleast_1d(self.prior.upper_quantile(np.asarray(alphas, dtype=float)))
    if ds.kind is PayloadKind.NORMAL:
      return tail_normal(ds.x[rows], ds.sigma2[rows], self.prior, thetas)
    if ds.kind is PayloadKind.BINOMIAL:
      return tail_beta_binomial(ds.y[rows], ds.n[rows], self.prior, thetas)
    values = np.empty(rows.size)
    for k, (row, theta) in enumerate(zip(rows, thetas)):
      draws = ds.draws[row]
      values[k] = (draws.size - np.searchsorted(draws, theta, side="left")) / draws.size
    return values

  def matrix_at_theta(self, thetas: np.ndarray) -> np.ndarray:
    """Tail probabilities of every unit at each threshold."""
    blocks = map_blocks(lambda start, stop: self.block_at_theta(start, stop, thetas), len(self))
    if not blocks:
      return np.empty((0, np.size(thetas)))
    return np.vstack(blocks)

  def matrix(self, alphas: np.ndarray) -> np.ndarray:
    """V matrix: rows are units, columns are alpha values."""
    return self.matrix_at_theta(np.atleast_1d(self.prior.upper_quantile(np.asarray(alphas, dtype=float))))

  def posterior_mean(self) -> np.ndarray:
    """Posterior means of all units."""
    ds = self.dataset
    if ds.kind is PayloadKind.NORMAL:
      return posterior_normal_moments(ds.x, ds.sigma2, self.prior)[0]
    if ds.kind is PayloadKind.BINOMIAL:
      return (ds.y + self.prior.a) / (ds.n + self.prior.a + self.prior.b)
    return np.array([draws.mean() for draws in ds.draws])

  def mle(self) -> np.ndarray:
    """Maximum-likelihood estimates: x, y/n, or the draw mean."""
    ds = self.dataset
    if ds.kind is PayloadKind.NORMAL:
      return np.asarray(ds.x, dtype=float).copy()
    if ds.kind is PayloadKind.BINOMIAL:
      return ds.y / ds.n
    return np.array([draws.mean() for draws in ds.draws])

  def per(self, n_nodes: Optional[int] = None) -> np.ndarray:
    """Posterior expected relative rank of every unit (0 = top).

    Normal data use the exact form Phi((mu - m_i) / sqrt(tau2 + v_i));
    other kinds integrate the tail function over a uniform alpha grid.
    """
    ds = self.dataset
    if ds.kind is PayloadKind.NORMAL:
      mean, var = posterior_normal_moments(ds.x, ds.sigma2, self.prior)
      return special.ndtr((self.prior.mu - mean) / np.sqrt(self.prior.tau2 + var))
    nodes = _per_nodes(n_nodes)
    thetas = np.atleast_1d(self.prior.upper_quantile(nodes[1:-1]))

    def block(start: int, stop: int) -> np.ndarray:
      inner = self.block_at_theta(start, stop, thetas)
      padded = np.hstack([inner[:, :1], inner, inner[:, -1:]])
      return 1.0 - integrate.trapezoid(padded, nodes, axis=1)

    return np.concatenate(map_blocks(block, len(self), min_block=1024))
