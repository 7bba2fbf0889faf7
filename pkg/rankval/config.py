"""Application configuration settings.

This module defines rankval's configuration using Pydantic Settings,
which loads values from environment variables and .env files with type validation.

The Settings class manages:
- Logging level and worker-thread cap (RANKVAL_THREADS)
- The default alpha grid and lambda-curve smoothing
- Optimizer, quadrature and root-finding tolerances
- Posterior-draw and prior-draw floors
- Simulation block size and replicate counts

Configuration Priority:
1. Environment variables (highest priority)
2. .env file in the working directory
3. Default values defined in this module

Example:
    from rankval.config import settings

    print(settings.GRID_SIZE)
    print(settings.RANKVAL_THREADS)
"""

import logging
import os

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

logger = logging.getLogger(__name__)

VALID_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
VALID_ISOTONIC_MODES = ("off", "increasing", "decreasing")
VALID_LAMBDA_SOURCES = ("empirical", "model")


class Settings(BaseSettings):
  """Runtime configuration for rankval.

  Attributes:
    APP_NAME: Application name echoed in run manifests
    VERSION: Package version echoed in run manifests
    LOG_LEVEL: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
    RANKVAL_THREADS: Maximum worker threads for per-unit computations
    GRID_SIZE: Number of nodes in the default alpha grid
    GRID_ALPHA_MIN: Smallest alpha node
    GRID_ALPHA_SPLIT: Alpha where log-log spacing switches to uniform spacing
    GRID_ALPHA_MAX: Largest alpha node
    SMOOTH_BANDWIDTH: Gaussian-kernel bandwidth for lambda smoothing, in grid nodes
    LAMBDA_ISOTONIC: Optional isotonic projection of the smoothed lambda curve
    LAMBDA_QUANTILE_METHOD: numpy quantile method for the raw lambda values
    LAMBDA_SOURCE: Where lambda comes from: smoothed column quantiles or the fitted normal model
    SMOOTHING_WARN_DELTA: Warn when smoothing moves any node by more than this
    ROOT_TOL: Alpha tolerance for r-value bisection
    FIT_GTOL: Gradient-norm tolerance for marginal ML fits
    FIT_MAX_ITER: Iteration cap for marginal ML fits
    QUAD_ABS_TOL: Absolute tolerance for variance-law quadrature
    U_ALPHA_TOL: Residual tolerance for size-constant solves
    U_TABLE_NODES: Number of r nodes in the closed-form u table
    MIN_POSTERIOR_DRAWS: Posterior draws per unit below which a warning is logged
    MIN_PRIOR_DRAWS: Minimum pooled draws for an empirical prior
    MIN_LAMBDA_UNITS: Units below which lambda quantiles are flagged as unreliable
    PER_GRID_NODES: Quadrature nodes for the PER integral identity
    SIM_BLOCK_SIZE: Units per independently seeded simulation block
    SIMILARITY_REPLICATES: Default posterior replicates for the validation study
    TABLE_SIGNIFICANT_DIGITS: Significant digits of reals in CSV tables
  """

  APP_NAME: str = "rankval"
  VERSION: str = "0.1.0"

  LOG_LEVEL: str = Field(
    default="INFO",
    description="Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)"
  )
  RANKVAL_THREADS: int = Field(
    default_factory=lambda: os.cpu_count() or 1,
    description="Maximum worker threads for per-unit computations"
  )

  # Alpha grid
  GRID_SIZE: int = Field(default=199, description="Nodes in the default alpha grid")
  GRID_ALPHA_MIN: float = Field(default=1e-4, description="Smallest alpha node")
  GRID_ALPHA_SPLIT: float = Field(default=0.5, description="End of the log-log enriched section")
  GRID_ALPHA_MAX: float = Field(default=0.9999, description="Largest alpha node")

  # Lambda curve
  SMOOTH_BANDWIDTH: float = Field(default=5.0, description="Gaussian kernel bandwidth in grid nodes")
  LAMBDA_ISOTONIC: str = Field(default="off", description="off, increasing or decreasing")
  LAMBDA_QUANTILE_METHOD: str = Field(default="linear", description="numpy quantile method")
  LAMBDA_SOURCE: str = Field(default="empirical", description="empirical or model")
  SMOOTHING_WARN_DELTA: float = Field(default=0.1, description="Warn threshold for smoothing changes")

  # Numerics
  ROOT_TOL: float = Field(default=1e-6, description="Alpha tolerance for r-value bisection")
  FIT_GTOL: float = Field(default=1e-8, description="Gradient-norm tolerance for ML fits")
  FIT_MAX_ITER: int = Field(default=500, description="Iteration cap for ML fits")
  QUAD_ABS_TOL: float = Field(default=1e-10, description="Absolute tolerance for quadrature")
  U_ALPHA_TOL: float = Field(default=1e-8, description="Residual tolerance for u_alpha solves")
  U_TABLE_NODES: int = Field(default=400, description="r nodes in the closed-form u table")
  PER_GRID_NODES: int = Field(default=1001, description="Alpha nodes for the PER integral")

  # Data floors
  MIN_POSTERIOR_DRAWS: int = Field(default=100, description="Warn below this many draws per unit")
  MIN_PRIOR_DRAWS: int = Field(default=1000, description="Minimum pooled draws for an empirical prior")
  MIN_LAMBDA_UNITS: int = Field(default=50, description="Warn below this many units")

  # Simulation
  SIM_BLOCK_SIZE: int = Field(default=65536, description="Units per seeded simulation block")
  SIMILARITY_REPLICATES: int = Field(default=2000, description="Posterior replicates for validation")

  # Output
  TABLE_SIGNIFICANT_DIGITS: int = Field(default=6, description="Significant digits in CSV tables")

  model_config = SettingsConfigDict(
    env_file=".env",
    env_file_encoding="utf-8",
    case_sensitive=True,
    extra="ignore",
  )

  @field_validator("LOG_LEVEL", mode="before")
  @classmethod
  def normalize_log_level(cls, value: str) -> str:
    """Upper-case the level and fall back to INFO for unknown names."""
    candidate = str(value).upper()
    if candidate not in VALID_LOG_LEVELS:
      logger.warning("LOG_LEVEL=%s is not recognised; using INFO", value)
      return "INFO"
    return candidate

  @field_validator("RANKVAL_THREADS", mode="before")
  @classmethod
  def clamp_threads(cls, value: int) -> int:
    """Keep at least one worker thread."""
    return max(1, int(value))

  @field_validator("LAMBDA_ISOTONIC")
  @classmethod
  def validate_isotonic(cls, value: str) -> str:
    """Validate the isotonic projection mode."""
    lowered = value.lower()
    if lowered not in VALID_ISOTONIC_MODES:
      raise ValueError(
        f"Invalid LAMBDA_ISOTONIC '{value}'. Must be one of: {', '.join(VALID_ISOTONIC_MODES)}"
      )
    return lowered

  @field_validator("LAMBDA_SOURCE")
  @classmethod
  def validate_lambda_source(cls, value: str) -> str:
    """Validate the lambda source."""
    lowered = value.lower()
    if lowered not in VALID_LAMBDA_SOURCES:
      raise ValueError(
        f"Invalid LAMBDA_SOURCE '{value}'. Must be one of: {', '.join(VALID_LAMBDA_SOURCES)}"
      )
    return lowered


settings = Settings()
