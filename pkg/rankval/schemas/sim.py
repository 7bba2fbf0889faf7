"""Simulation study configuration.

Key Schemas:
- ThetaLawConfig: generating law of the unit parameters
- VarianceLawConfig: generating law of the sampling variances (normal model)
- TrialsConfig: generating law of the trial counts (binomial model)
- SimConfig: one bench study (enrichment, agreement or validation)
"""

from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from rankval.config import settings
from rankval.models.priors import BetaPrior, GammaVar, InvGammaVar, NormalPrior, PointMassVar, ThetaLaw, VarianceLaw

STUDIES = ("enrichment", "agreement", "validation")
SIM_METHODS = ("rvalue", "mle", "pm", "per", "pv", "pvalue", "bf")
MIN_ENRICHMENT_UNITS = 1000


class ThetaLawConfig(BaseModel):
  """Generating law of theta."""

  model_config = ConfigDict(extra="forbid")

  family: Literal["normal", "beta"] = "normal"
  mu: float = Field(default=0.0, allow_inf_nan=False)
  tau2: float = Field(default=1.0, gt=0, allow_inf_nan=False)
  a: float = Field(default=1.0, gt=0, allow_inf_nan=False)
  b: float = Field(default=1.0, gt=0, allow_inf_nan=False)

  def build(self) -> ThetaLaw:
    """Instantiate the law."""
    if self.family == "normal":
      return NormalPrior(mu=self.mu, tau2=self.tau2)
    return BetaPrior(a=self.a, b=self.b)


class VarianceLawConfig(BaseModel):
  """Generating law of sigma2, parameterized by mean and coefficient of variation."""

  model_config = ConfigDict(extra="forbid")

  family: Literal["gamma", "invgamma", "point"] = "gamma"
  mean: float = Field(default=1.0, gt=0, allow_inf_nan=False)
  cv: float = Field(default=1.0, ge=0, allow_inf_nan=False)

  def build(self) -> VarianceLaw:
    """Instantiate the law; cv = 0 collapses to a point mass."""
    if self.family == "point" or self.cv == 0:
      return PointMassVar(self.mean)
    if self.family == "gamma":
      return GammaVar.from_mean_cv(self.mean, self.cv)
    shape = 2.0 + 1.0 / self.cv**2
    return InvGammaVar(shape=shape, scale=self.mean * (shape - 1.0))


class TrialsConfig(BaseModel):
  """Trial counts drawn uniformly from [low, high]."""

  model_config = ConfigDict(extra="forbid")

  low: int = Field(default=50, ge=1)
  high: int = Field(default=500, ge=1)

  @model_validator(mode="after")
  def validate_range(self) -> "TrialsConfig":
    """Require low <= high."""
    if self.low > self.high:
      raise ValueError(f"trials low={self.low} exceeds high={self.high}")
    return self


class SimConfig(BaseModel):
  """Configuration of one bench study.

  Examples:
    >>> SimConfig(study="agreement", n_units=1000, seed=7).theta_law.family
    'normal'
  """

  model_config = ConfigDict(extra="forbid")

  study: Literal["enrichment", "agreement", "validation"] = "agreement"
  label: str = ""
  n_units: int = Field(default=1_000_000, ge=1, description="Units per simulated population")
  seed: int = Field(..., ge=0, description="Root seed; every study is reproducible from it")
  replicates: int = Field(default=1, ge=1, description="Independent populations (or posterior replicates)")
  theta_law: ThetaLawConfig = Field(default_factory=ThetaLawConfig)
  variance_law: Optional[VarianceLawConfig] = Field(default_factory=VarianceLawConfig)
  trials: Optional[TrialsConfig] = None
  alphas: List[float] = Field(default_factory=lambda: [0.01, 0.05, 0.1, 0.25])
  cv_grid: List[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0, 1.5, 2.0])
  methods: List[str] = Field(default_factory=lambda: ["rvalue", "mle", "pv", "pm", "per"])
  t_grid: List[int] = Field(default_factory=lambda: [5, 10, 25, 50, 100])
  train_path: Optional[Path] = None
  full_path: Optional[Path] = None
  rvalue_engine: Literal["grid", "closed-form"] = "closed-form"

  @field_validator("alphas")
  @classmethod
  def validate_alphas(cls, v: List[float]) -> List[float]:
    """Alphas must lie in (0, 1)."""
    if not v or any(not 0 < a < 1 for a in v):
      raise ValueError("alphas must be a non-empty list of values in (0, 1)")
    return sorted(v)

  @field_validator("cv_grid")
  @classmethod
  def validate_cv_grid(cls, v: List[float]) -> List[float]:
    """CVs must be non-negative."""
    if any(cv < 0 for cv in v):
      raise ValueError("cv_grid values must be >= 0")
    return v

  @field_validator("methods")
  @classmethod
  def validate_methods(cls, v: List[str]) -> List[str]:
    """Normalize and check method tags."""
    v = [m.lower() for m in v]
    unknown = [m for m in v if m not in SIM_METHODS]
    if unknown:
      raise ValueError(f"Invalid method(s) {unknown}. Must be among: {', '.join(SIM_METHODS)}")
    return v

  @field_validator("t_grid")
  @classmethod
  def validate_t_grid(cls, v: List[int]) -> List[int]:
    """List sizes must be positive."""
    if not v or any(t < 1 for t in v):
      raise ValueError("t_grid must be a non-empty list of positive integers")
    return sorted(v)

  @model_validator(mode="after")
  def validate_study(self) -> "SimConfig":
    """Cross-field checks per study."""
    if self.study == "enrichment" and self.n_units < MIN_ENRICHMENT_UNITS:
      raise ValueError(f"enrichment studies need n_units >= {MIN_ENRICHMENT_UNITS}")
    if self.study == "validation":
      if self.full_path is None and self.trials is None:
        raise ValueError("validation needs train_path/full_path or a synthetic trials law")
      if (self.train_path is None) != (self.full_path is None):
        raise ValueError("train_path and full_path must be given together")
      return self
    if self.theta_law.family == "normal" and self.variance_law is None:
      raise ValueError("normal theta law needs a variance_law")
    if self.theta_law.family == "beta" and self.trials is None:
      raise ValueError("beta theta law needs a trials law")
    return self

  @property
  def effective_replicates(self) -> int:
    """Replicates, defaulting validation studies to settings.SIMILARITY_REPLICATES."""
    if self.study == "validation" and "replicates" not in self.model_fields_set:
      return settings.SIMILARITY_REPLICATES
    return self.replicates
