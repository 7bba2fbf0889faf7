"""Population laws: theta priors and variance laws.

Theta laws (NormalPrior, BetaPrior, EmpiricalPrior) answer upper-quantile,
CDF and sampling queries. Variance laws (GammaVar, InvGammaVar,
PointMassVar, EmpiricalVar) describe the spread of unit sampling variances
and integrate functions of sigma2 against themselves.

All laws are frozen dataclasses and safe to share between threads.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Union

import numpy as np
from scipy import integrate, stats

from rankval.config import settings
from rankval.core.exceptions import DegenerateDataError, QuadratureFailureError, TooFewDrawsError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

_EXPECTATION_CHUNK = 8192
QUAD_FAILURE_ERROR = 1e-8


def _require_positive(name: str, value: float) -> None:
  if not (np.isfinite(value) and value > 0):
    raise DegenerateDataError(f"{name} must be positive and finite, got {value}", details={name: value})


def _check_alpha(alpha: ArrayLike) -> np.ndarray:
  a = np.asarray(alpha, dtype=float)
  if np.any((a <= 0) | (a >= 1)):
    raise ValueError("alpha must lie in the open interval (0, 1)")
  return a


def _scalar_or_array(values: np.ndarray, like: ArrayLike) -> ArrayLike:
  return float(values) if np.ndim(like) == 0 else values


# ============================================================================
# Theta laws
# ============================================================================

@dataclass(frozen=True)
class NormalPrior:
  """Normal(mu, tau2) population law of theta."""

  mu: float
  tau2: float
  family: str = field(default="normal", init=False)

  def __post_init__(self):
    """Validate parameters."""
    if not np.isfinite(self.mu):
      raise DegenerateDataError("mu must be finite", details={"mu": self.mu})
    _require_positive("tau2", self.tau2)

  @property
  def tau(self) -> float:
    """Prior standard deviation."""
    return float(np.sqrt(self.tau2))

  def upper_quantile(self, alpha: ArrayLike) -> ArrayLike:
    """Return theta_alpha with P(theta >= theta_alpha) = alpha."""
    a = _check_alpha(alpha)
    return _scalar_or_array(self.mu + self.tau * stats.norm.isf(a), alpha)

  def cdf(self, theta: ArrayLike) -> ArrayLike:
    """Prior CDF."""
    return _scalar_or_array(stats.norm.cdf(np.asarray(theta, dtype=float), self.mu, self.tau), theta)

  def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` thetas."""
    return rng.normal(self.mu, self.tau, size)

  def mean(self) -> float:
    """Prior mean."""
    return self.mu

  def params(self) -> Dict[str, float]:
    """Parameters as a plain dict."""
    return {"mu": self.mu, "tau2": self.tau2}


@dataclass(frozen=True)
class BetaPrior:
  """Beta(a, b) population law of theta."""

  a: float
  b: float
  family: str = field(default="beta", init=False)

  def __post_init__(self):
    """Validate parameters."""
    _require_positive("a", self.a)
    _require_positive("b", self.b)

  def upper_quantile(self, alpha: ArrayLike) -> ArrayLike:
    """Return theta_alpha with P(theta >= theta_alpha) = alpha."""
    a = _check_alpha(alpha)
    return _scalar_or_array(stats.beta.isf(a, self.a, self.b), alpha)

  def cdf(self, theta: ArrayLike) -> ArrayLike:
    """Prior CDF."""
    return _scalar_or_array(stats.beta.cdf(np.asarray(theta, dtype=float), self.a, self.b), theta)

  def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` thetas."""
    return rng.beta(self.a, self.b, size)

  def mean(self) -> float:
    """Prior mean a / (a + b)."""
    return self.a / (self.a + self.b)

  def params(self) -> Dict[str, float]:
    """Parameters as a plain dict."""
    return {"a": self.a, "b": self.b}


@dataclass(frozen=True, eq=False)
class EmpiricalPrior:
  """Population law of theta given by a sorted sample of draws.

  Quantiles follow the linear rule between order statistics, the same as
  ``numpy.quantile(..., method="linear")``; CDF queries use binary search.
  """

  draws: np.ndarray
  family: str = field(default="empirical", init=False)

  def __post_init__(self):
    """Sort, freeze and check the draw count."""
    values = np.sort(np.asarray(self.draws, dtype=float))
    if values.size < settings.MIN_PRIOR_DRAWS:
      raise TooFewDrawsError(int(values.size), settings.MIN_PRIOR_DRAWS)
    if not np.all(np.isfinite(values)):
      raise DegenerateDataError("prior draws must be finite")
    values.setflags(write=False)
    object.__setattr__(self, "draws", values)

  def upper_quantile(self, alpha: ArrayLike) -> ArrayLike:
    """Return the empirical (1 - alpha) quantile."""
    a = _check_alpha(alpha)
    m = self.draws.size
    h = (m - 1) * (1.0 - a)
    lo = np.clip(np.floor(h).astype(np.int64), 0, m - 1)
    hi = np.minimum(lo + 1, m - 1)
    values = self.draws[lo] + (h - lo) * (self.draws[hi] - self.draws[lo])
    return _scalar_or_array(values, alpha)

  def cdf(self, theta: ArrayLike) -> ArrayLike:
    """Fraction of draws at or below theta."""
    t = np.asarray(theta, dtype=float)
    values = np.searchsorted(self.draws, t, side="right") / self.draws.size
    return _scalar_or_array(values, theta)

  def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
    """Resample ``size`` draws with replacement."""
    return rng.choice(self.draws, size=size, replace=True)

  def mean(self) -> float:
    """Mean of the draws."""
    return float(self.draws.mean())

  def params(self) -> Dict[str, float]:
    """Summary of the draw sample."""
    return {
      "count": int(self.draws.size),
      "mean": self.mean(),
      "min": float(self.draws[0]),
      "max": float(self.draws[-1]),
    }


ThetaLaw = Union[NormalPrior, BetaPrior, EmpiricalPrior]


@dataclass(frozen=True)
class ThetaQuantile:
  """A prior upper quantile: P(theta >= theta_alpha) = alpha."""

  alpha: float
  theta_alpha: float

  def __post_init__(self):
    """Validate alpha."""
    _check_alpha(self.alpha)


def theta_quantiles(law: ThetaLaw, alphas: np.ndarray) -> list:
  """Return ThetaQuantile records for each alpha."""
  thetas = np.atleast_1d(law.upper_quantile(np.asarray(alphas, dtype=float)))
  return [ThetaQuantile(float(a), float(t)) for a, t in zip(np.atleast_1d(alphas), thetas)]


# ============================================================================
# Variance laws
# ============================================================================

def _quad_expectation(f: Callable[[np.ndarray], np.ndarray], pdf: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
  """Integrate f(s) pdf(s) over (0, inf) with s = w / (1 - w)."""

  def integrand(w: float) -> np.ndarray:
    s = w / (1.0 - w)
    weight = pdf(np.array([s]))[0] / (1.0 - w) ** 2
    value = np.asarray(f(np.array([s]))[0], dtype=float)
    if weight == 0.0:
      return np.zeros_like(value)
    return value * weight

  result, error, info = integrate.quad_vec(
    integrand,
    0.0,
    1.0,
    epsabs=settings.QUAD_ABS_TOL,
    epsrel=1e-12,
    full_output=True,
  )
  worst = float(np.max(np.abs(error))) if np.size(error) else 0.0
  if not np.all(np.isfinite(result)) or (not info.success and worst > QUAD_FAILURE_ERROR):
    raise QuadratureFailureError(
      "Variance-law integral did not converge",
      details={"error_estimate": worst, "message": str(info.message)},
    )
  return np.asarray(result)


@dataclass(frozen=True)
class GammaVar:
  """Gamma(shape, rate) law of sigma2."""

  shape: float
  rate: float
  family: str = field(default="gamma", init=False)

  def __post_init__(self):
    """Validate parameters."""
    _require_positive("shape", self.shape)
    _require_positive("rate", self.rate)

  @classmethod
  def from_mean_cv(cls, mean: float, cv: float) -> "GammaVar":
    """Build the Gamma law with a given mean and coefficient of variation."""
    shape = 1.0 / cv ** 2
    return cls(shape=shape, rate=shape / mean)

  def mean(self) -> float:
    """Expected sigma2."""
    return self.shape / self.rate

  def pdf(self, s: np.ndarray) -> np.ndarray:
    """Density at s."""
    return stats.gamma.pdf(s, self.shape, scale=1.0 / self.rate)

  def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` variances."""
    return rng.gamma(self.shape, 1.0 / self.rate, size)

  def scaled(self, c: float) -> "GammaVar":
    """Law of c * sigma2."""
    return GammaVar(shape=self.shape, rate=self.rate / c)

  def expectation(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """E[f(sigma2)] by adaptive Gauss-Kronrod quadrature."""
    return _quad_expectation(f, self.pdf)

  def params(self) -> Dict[str, float]:
    """Parameters as a plain dict."""
    return {"shape": self.shape, "rate": self.rate}


@dataclass(frozen=True)
class InvGammaVar:
  """Inverse-gamma(shape, scale) law of sigma2."""

  shape: float
  scale: float
  family: str = field(default="invgamma", init=False)

  def __post_init__(self):
    """Validate parameters."""
    _require_positive("shape", self.shape)
    _require_positive("scale", self.scale)

  def mean(self) -> float:
    """Expected sigma2 (infinite when shape <= 1)."""
    return self.scale / (self.shape - 1.0) if self.shape > 1 else float("inf")

  def pdf(self, s: np.ndarray) -> np.ndarray:
    """Density at s."""
    return stats.invgamma.pdf(s, self.shape, scale=self.scale)

  def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` variances."""
    return self.scale / rng.gamma(self.shape, 1.0, size)

  def scaled(self, c: float) -> "InvGammaVar":
    """Law of c * sigma2."""
    return InvGammaVar(shape=self.shape, scale=self.scale * c)

  def expectation(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """E[f(sigma2)] by adaptive Gauss-Kronrod quadrature."""
    return _quad_expectation(f, self.pdf)

  def params(self) -> Dict[str, float]:
    """Parameters as a plain dict."""
    return {"shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class PointMassVar:
  """Every unit has the same sampling variance sigma2."""

  sigma2: float
  family: str = field(default="pointmass", init=False)

  def __post_init__(self):
    """Validate parameters."""
    _require_positive("sigma2", self.sigma2)

  def mean(self) -> float:
    """The common variance."""
    return self.sigma2

  def pdf(self, s: np.ndarray) -> np.ndarray:
    """Not a density; zero everywhere except the atom."""
    return np.where(np.asarray(s) == self.sigma2, np.inf, 0.0)

  def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
    """Return ``size`` copies of sigma2."""
    return np.full(size, self.sigma2)

  def scaled(self, c: float) -> "PointMassVar":
    """Law of c * sigma2."""
    return PointMassVar(sigma2=self.sigma2 * c)

  def expectation(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Evaluate f at the atom."""
    return np.asarray(f(np.array([self.sigma2]))[0])

  def params(self) -> Dict[str, float]:
    """Parameters as a plain dict."""
    return {"sigma2": self.sigma2}


@dataclass(frozen=True, eq=False)
class EmpiricalVar:
  """Law of sigma2 given by observed variances."""

  draws: np.ndarray
  family: str = field(default="empirical", init=False)

  def __post_init__(self):
    """Sort, freeze and validate the sample."""
    values = np.sort(np.asarray(self.draws, dtype=float))
    if values.size == 0 or not np.all(np.isfinite(values)) or np.any(values <= 0):
      raise DegenerateDataError("empirical variance law needs positive finite values")
    values.setflags(write=False)
    object.__setattr__(self, "draws", values)

  def mean(self) -> float:
    """Sample mean of the variances."""
    return float(self.draws.mean())

  def pdf(self, s: np.ndarray) -> np.ndarray:
    """Kernel density estimate of the sample (display only)."""
    return stats.gaussian_kde(np.log(self.draws))(np.log(s)) / np.asarray(s)

  def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
    """Resample the observed variances."""
    return rng.choice(self.draws, size=size, replace=True)

  def scaled(self, c: float) -> "EmpiricalVar":
    """Law of c * sigma2."""
    return EmpiricalVar(draws=self.draws * c)

  def expectation(self, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Sample average of f over the observed variances."""
    total = None
    for start in range(0, self.draws.size, _EXPECTATION_CHUNK):
      block = np.asarray(f(self.draws[start:start + _EXPECTATION_CHUNK])).sum(axis=0)
      total = block if total is None else total + block
    return total / self.draws.size

  def params(self) -> Dict[str, float]:
    """Summary of the sample."""
    return {"count": int(self.draws.size), "mean": self.mean()}


VarianceLaw = Union[GammaVar, InvGammaVar, PointMassVar, EmpiricalVar]


@dataclass(frozen=True)
class PriorSpec:
  """Theta law plus an optional variance law."""

  theta_law: ThetaLaw
  variance_law: Optional[VarianceLaw] = None
