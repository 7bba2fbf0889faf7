"""JSON documents written next to every output.

Key Schemas:
- LawDocument: one theta or variance law, reloadable
- FittedPriorDocument: fitted prior plus fit diagnostics (the `fit` output and `--prior file` input)
- RunManifest: provenance of one CLI run (versions, seed, hashes, outputs);
  run id and timings sit in a separate runtime block

Floats are written with pydantic's shortest round-trip representation.
"""

from datetime import datetime
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from rankval.core.exceptions import InvalidConfigError
from rankval.models.priors import (
  BetaPrior,
  EmpiricalPrior,
  EmpiricalVar,
  GammaVar,
  InvGammaVar,
  NormalPrior,
  PointMassVar,
  PriorSpec,
  ThetaLaw,
  VarianceLaw,
)

THETA_FAMILIES = ("normal", "beta", "empirical")
VARIANCE_FAMILIES = ("gamma", "invgamma", "pointmass", "empirical")


class LawDocument(BaseModel):
  """Serialized law: family, parameters and (for empirical laws) the draws."""

  model_config = ConfigDict(extra="forbid")

  family: str = Field(..., description="Law family tag", examples=["beta", "gamma"])
  params: Dict[str, float] = Field(default_factory=dict)
  draws: Optional[List[float]] = Field(default=None, description="Sample backing an empirical law")

  @model_validator(mode="after")
  def validate_draws(self) -> "LawDocument":
    """Empirical laws carry their draws."""
    if self.family == "empirical" and not self.draws:
      raise ValueError("empirical laws need draws")
    return self

  @classmethod
  def from_law(cls, law: Any) -> "LawDocument":
    """Serialize a theta law or variance law."""
    draws = getattr(law, "draws", None)
    return cls(
      family=law.family,
      params={k: float(v) for k, v in law.params().items()},
      draws=None if draws is None else [float(d) for d in draws],
    )

  def _param(self, name: str) -> float:
    if name not in self.params:
      raise InvalidConfigError(f"{self.family} law is missing parameter '{name}'", details={"params": self.params})
    return self.params[name]

  def to_theta_law(self) -> ThetaLaw:
    """Rebuild as a theta law.

    Raises:
      InvalidConfigError: Unknown family or missing parameter
    """
    if self.family == "normal":
      return NormalPrior(mu=self._param("mu"), tau2=self._param("tau2"))
    if self.family == "beta":
      return BetaPrior(a=self._param("a"), b=self._param("b"))
    if self.family == "empirical":
      return EmpiricalPrior(np.asarray(self.draws, dtype=float))
    raise InvalidConfigError(f"Unknown theta law family '{self.family}'", details={"allowed": list(THETA_FAMILIES)})

  def to_variance_law(self) -> VarianceLaw:
    """Rebuild as a variance law.

    Raises:
      InvalidConfigError: Unknown family or missing parameter
    """
    if self.family == "gamma":
      return GammaVar(shape=self._param("shape"), rate=self._param("rate"))
    if self.family == "invgamma":
      return InvGammaVar(shape=self._param("shape"), scale=self._param("scale"))
    if self.family == "pointmass":
      return PointMassVar(self._param("sigma2"))
    if self.family == "empirical":
      return EmpiricalVar(np.asarray(self.draws, dtype=float))
    raise InvalidConfigError(
      f"Unknown variance law family '{self.family}'",
      details={"allowed": list(VARIANCE_FAMILIES)},
    )


class FitDiagnostics(BaseModel):
  """Optimizer outcome of a marginal maximum-likelihood fit."""

  loglik: float
  converged: bool
  iterations: int = 0
  grad_norm: float = 0.0
  std_errors: Dict[str, float] = Field(default_factory=dict)
  boundary: bool = False
  n_units: int = 0


class FittedPriorDocument(BaseModel):
  """Fitted prior written by `rankval fit` and read by `--prior file`.

  Examples:
    >>> doc = FittedPriorDocument(theta_law=LawDocument(family="beta", params={"a": 15.12, "b": 5.38}))
    >>> doc.to_prior_spec().theta_law.a
    15.12
  """

  model_config = ConfigDict(extra="forbid")

  kind: Literal["fitted-prior"] = "fitted-prior"
  theta_law: LawDocument
  variance_law: Optional[LawDocument] = None
  theta_fit: Optional[FitDiagnostics] = None
  variance_fit: Optional[FitDiagnostics] = None
  data_hash: str = ""
  config_hash: str = ""

  def to_prior_spec(self) -> PriorSpec:
    """Rebuild the PriorSpec."""
    return PriorSpec(
      theta_law=self.theta_law.to_theta_law(),
      variance_law=self.variance_law.to_variance_law() if self.variance_law else None,
    )

  @classmethod
  def from_fits(cls, theta_fit: Any, variance_fit: Any = None, config_hash: str = "") -> "FittedPriorDocument":
    """Build from PriorFit results (or bare laws)."""

    def diagnostics(fit: Any) -> Optional[FitDiagnostics]:
      if fit is None or not hasattr(fit, "loglik"):
        return None
      return FitDiagnostics(
        loglik=fit.loglik,
        converged=fit.converged,
        iterations=fit.iterations,
        grad_norm=fit.grad_norm,
        std_errors=fit.std_errors,
        boundary=fit.boundary,
        n_units=fit.n_units,
      )

    def law(fit: Any) -> Any:
      return getattr(fit, "prior", fit)

    return cls(
      theta_law=LawDocument.from_law(law(theta_fit)),
      variance_law=LawDocument.from_law(law(variance_fit)) if variance_fit is not None else None,
      theta_fit=diagnostics(theta_fit),
      variance_fit=diagnostics(variance_fit),
      data_hash=getattr(theta_fit, "data_hash", ""),
      config_hash=config_hash,
    )


class RunRuntime(BaseModel):
  """Fields that differ between otherwise identical runs."""

  run_id: str
  started_at: datetime
  timings_ms: Dict[str, float] = Field(default_factory=dict)


class RunManifest(BaseModel):
  """Provenance of one run.

  Everything outside ``runtime`` is a function of the config, the inputs and
  the seed, so two identical runs produce equal ``deterministic()`` dumps.
  """

  app_name: str
  version: str
  command: str
  config: Dict[str, Any]
  config_hash: str
  data_hash: Optional[str] = None
  seed: Optional[int] = None
  versions: Dict[str, str] = Field(default_factory=dict)
  outputs: Dict[str, str] = Field(default_factory=dict)
  diagnostics: Dict[str, Any] = Field(default_factory=dict)
  status: Literal["ok", "error"] = "ok"
  error: Optional[Dict[str, Any]] = None
  runtime: RunRuntime

  def deterministic(self) -> Dict[str, Any]:
    """JSON dump without the runtime block."""
    return self.model_dump(mode="json", exclude={"runtime"})
