"""Run configuration resolved from CLI flags."""

from pathlib import Path
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from rankval.core.exceptions import InvalidConfigError, MissingInputError
from rankval.core.utils import config_hash

COMMANDS = ("fit", "tailprob", "rvalue", "rank", "curves", "bench")
MODEL_KINDS = ("normal", "binomial", "draws")


class RunConfig(BaseModel):
  """Everything one CLI invocation needs.

  Fields left as None fall back to settings defaults inside the services.
  The config (without output paths) is hashed into every artifact.
  """

  model_config = ConfigDict(extra="forbid")

  command: Literal["fit", "tailprob", "rvalue", "rank", "curves", "bench"]
  input_path: Optional[Path] = None
  draws_path: Optional[Path] = None
  model: Optional[Literal["normal", "binomial", "draws"]] = None
  prior_source: Literal["fit", "file"] = "fit"
  prior_path: Optional[Path] = None
  variance_family: Literal["gamma", "invgamma", "empirical"] = "gamma"

  grid_size: Optional[int] = Field(default=None, ge=3)
  smooth_bandwidth: Optional[float] = Field(default=None, ge=0)
  isotonic: Optional[Literal["off", "increasing", "decreasing"]] = None
  lambda_source: Optional[Literal["empirical", "model"]] = None
  engine: Literal["grid", "closed-form"] = "grid"

  methods: Optional[List[str]] = None
  pvalue_c: float = 0.0
  min_successes: Optional[int] = Field(default=None, ge=0)
  alphas: Optional[List[float]] = None
  sigma2_max: float = Field(default=4.0, gt=0)
  sigma2_points: int = Field(default=100, ge=2)

  bench_config_path: Optional[Path] = None
  study: Optional[Literal["enrichment", "agreement", "validation"]] = None
  seed: Optional[int] = Field(default=None, ge=0)

  out: Optional[Path] = None
  prior_out: Optional[Path] = None
  dump_lambda: Optional[Path] = None
  dump_v: Optional[Path] = None
  manifest_out: Optional[Path] = None

  @field_validator("alphas")
  @classmethod
  def validate_alphas(cls, v: Optional[List[float]]) -> Optional[List[float]]:
    """Alphas must lie in (0, 1)."""
    if v is not None and (not v or any(not 0 < a < 1 for a in v)):
      raise ValueError("alphas must lie in (0, 1)")
    return sorted(v) if v else v

  @model_validator(mode="after")
  def validate_command(self) -> "RunConfig":
    """Cross-field requirements per command."""
    if self.command == "bench":
      if self.bench_config_path is None:
        raise ValueError("bench needs --config")
    elif self.command == "curves":
      if self.input_path is None and self.prior_path is None:
        raise ValueError("curves needs --in or --prior-file")
    elif self.input_path is None:
      raise ValueError(f"{self.command} needs --in")
    if self.prior_source == "file" and self.prior_path is None:
      raise ValueError("--prior file needs --prior-file")
    if self.command == "tailprob" and not self.alphas:
      raise ValueError("tailprob needs --alphas")
    return self

  def input_paths(self) -> Dict[str, Path]:
    """All input paths named by the config."""
    candidates = {
      "input": self.input_path,
      "draws": self.draws_path,
      "prior": self.prior_path if self.prior_source == "file" or self.command == "curves" else None,
      "bench_config": self.bench_config_path,
    }
    return {name: path for name, path in candidates.items() if path is not None}

  def validate_paths(self) -> None:
    """Check every input exists and every output directory is writable before computing.

    Raises:
      MissingInputError: An input path does not exist
      InvalidConfigError: An output directory does not exist
    """
    for path in self.input_paths().values():
      if not path.is_file():
        raise MissingInputError(str(path))
    for name, path in self.output_paths().items():
      if not path.parent.exists():
        raise InvalidConfigError(f"Output directory for {name} does not exist", details={"path": str(path)})

  def output_paths(self) -> Dict[str, Path]:
    """All output paths named by the config."""
    candidates = {
      "table": self.out,
      "prior": self.prior_out,
      "lambda": self.dump_lambda,
      "v_matrix": self.dump_v,
      "manifest": self.manifest_out,
    }
    return {name: path for name, path in candidates.items() if path is not None}

  def hash(self) -> str:
    """Config hash over every field except output locations."""
    payload = self.model_dump(mode="json", exclude={"out", "prior_out", "dump_lambda", "dump_v", "manifest_out"})
    return config_hash(payload)


__all__ = ["COMMANDS", "MODEL_KINDS", "RunConfig"]
