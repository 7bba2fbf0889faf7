"""End-to-end orchestration of one CLI command.

Each command reads its inputs, resolves the prior, runs the services inside
timed stages and writes its artifacts plus a run manifest. Errors propagate
as RankvalError subclasses; the CLI turns them into exit codes.
"""

import logging
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from rankval.config import settings
from rankval.core.exceptions import InvalidConfigError, ModelMismatchError
from rankval.core.tracing import new_run_id, timed_stage
from rankval.models.priors import NormalPrior, PriorSpec
from rankval.models.units import Dataset, PayloadKind
from rankval.schemas.documents import FittedPriorDocument, RunManifest, RunRuntime
from rankval.schemas.run import RunConfig
from rankval.services import io_service
from rankval.services.baseline_rankers import curves_frame
from rankval.services.prior_fit import (
  empirical_prior_from_draws,
  fit_beta_binomial,
  fit_normal_normal,
  fit_variance_law,
)
from rankval.services.ranking_service import RankingService
from rankval.services.rvalue_engine import default_alpha_grid
from rankval.services.sim_bench import run_study
from rankval.services.tail_prob import TailModel

logger = logging.getLogger(__name__)

DEFAULT_CURVE_METHODS = ["mle", "pv0", "pm", "per", "bf", "maxagree"]
DEFAULT_CURVE_ALPHAS = [0.01, 0.05, 0.1, 0.25]
VERSIONED_PACKAGES = ("numpy", "scipy", "pandas", "pydantic")


@dataclass
class RunContext:
  """State shared by the stages of one run."""

  config: RunConfig
  config_hash: str
  timings: Dict[str, float] = field(default_factory=dict)
  outputs: Dict[str, str] = field(default_factory=dict)
  diagnostics: Dict[str, Any] = field(default_factory=dict)
  data_hash: Optional[str] = None
  seed: Optional[int] = None


@dataclass
class PipelineResult:
  """Outcome of a run: exit code, written artifacts, manifest and the main table."""

  exit_code: int
  outputs: Dict[str, str]
  manifest: RunManifest
  table: Optional[pd.DataFrame] = None


def package_versions() -> Dict[str, str]:
  """Installed versions of the numeric stack."""
  versions = {"rankval": settings.VERSION}
  for name in VERSIONED_PACKAGES:
    try:
      versions[name] = metadata.version(name)
    except metadata.PackageNotFoundError:
      versions[name] = "unknown"
  return versions


# ============================================================================
# Shared stages
# ============================================================================

def load_dataset(ctx: RunContext) -> Dataset:
  """Read and validate the input units."""
  config = ctx.config
  with timed_stage("read_input", ctx.timings):
    dataset = io_service.read_units(config.input_path, kind=config.model, draws_path=config.draws_path)
  ctx.data_hash = dataset.data_hash()
  return dataset


def fit_prior(dataset: Dataset, variance_family: str = "gamma") -> Tuple[PriorSpec, FittedPriorDocument]:
  """Fit the model-appropriate prior (and variance law for normal data)."""
  if dataset.kind is PayloadKind.BINOMIAL:
    theta_fit = fit_beta_binomial(dataset)
    return PriorSpec(theta_law=theta_fit.prior), FittedPriorDocument.from_fits(theta_fit)
  if dataset.kind is PayloadKind.NORMAL:
    theta_fit = fit_normal_normal(dataset)
    variance_fit = fit_variance_law(dataset, variance_family)
    spec = PriorSpec(theta_law=theta_fit.prior, variance_law=variance_fit.prior)
    return spec, FittedPriorDocument.from_fits(theta_fit, variance_fit)
  prior = empirical_prior_from_draws(dataset)
  document = FittedPriorDocument.from_fits(prior)
  document.data_hash = dataset.data_hash()
  return PriorSpec(theta_law=prior), document


def resolve_prior(ctx: RunContext, dataset: Optional[Dataset]) -> Tuple[PriorSpec, FittedPriorDocument]:
  """Load the prior from file or fit it, and write it when requested."""
  config = ctx.config
  with timed_stage("resolve_prior", ctx.timings):
    if config.prior_source == "file" or dataset is None:
      document = io_service.read_prior_document(config.prior_path)
      spec = document.to_prior_spec()
    else:
      spec, document = fit_prior(dataset, config.variance_family)
    document.config_hash = ctx.config_hash
  ctx.diagnostics["prior"] = document.theta_law.params
  if config.prior_out is not None:
    ctx.outputs["prior"] = str(io_service.write_json(document, config.prior_out))
  return spec, document


def emit_table(ctx: RunContext, frame: pd.DataFrame, name: str = "table") -> None:
  """Write the main table to --out, or to stdout when no path was given."""
  if ctx.config.out is not None:
    ctx.outputs[name] = str(io_service.write_table(frame, ctx.config.out, ctx.config_hash))
  else:
    sys.stdout.write(io_service.render_table(frame, ctx.config_hash))


def build_service(ctx: RunContext, dataset: Dataset, spec: PriorSpec) -> RankingService:
  """RankingService configured from the run config."""
  config = ctx.config
  grid = default_alpha_grid(size=config.grid_size)
  return RankingService(
    dataset,
    spec,
    grid=grid,
    bandwidth=config.smooth_bandwidth,
    isotonic=config.isotonic,
    lambda_source=config.lambda_source,
    engine=config.engine,
    pvalue_c=config.pvalue_c,
  )


def write_dumps(ctx: RunContext, service: RankingService) -> None:
  """Write the optional lambda-curve and V-matrix dumps."""
  config = ctx.config
  if config.dump_lambda is not None and service.lambda_curve is not None:
    path = io_service.write_table(service.lambda_curve.to_frame(), config.dump_lambda, ctx.config_hash)
    ctx.outputs["lambda"] = str(path)
  if config.dump_v is not None and service.v_matrix is not None:
    frame = io_service.v_matrix_frame(service.dataset.ids, service.grid.nodes, service.v_matrix)
    ctx.outputs["v_matrix"] = str(io_service.write_table(frame, config.dump_v, ctx.config_hash))


# ============================================================================
# Commands
# ============================================================================

def run_fit(ctx: RunContext) -> Optional[pd.DataFrame]:
  """Fit the prior and write it as JSON (to --out, else stdout)."""
  dataset = load_dataset(ctx)
  _, document = resolve_prior(ctx, dataset)
  if ctx.config.out is not None:
    ctx.outputs["prior"] = str(io_service.write_json(document, ctx.config.out))
  elif ctx.config.prior_out is None:
    sys.stdout.write(document.model_dump_json(indent=2) + "\n")
  return None


def run_tailprob(ctx: RunContext) -> pd.DataFrame:
  """Tabulate V_alpha(D_i) for every unit at the requested alphas."""
  dataset = load_dataset(ctx)
  spec, _ = resolve_prior(ctx, dataset)
  alphas = np.asarray(ctx.config.alphas, dtype=float)
  with timed_stage("tail_probabilities", ctx.timings):
    model = TailModel(dataset, spec)
    v_matrix = model.matrix(alphas)
    frame = io_service.v_matrix_frame(dataset.ids, alphas, v_matrix)
    frame.insert(2, "theta", np.tile(np.atleast_1d(model.prior.upper_quantile(alphas)), len(dataset)))
  emit_table(ctx, frame)
  return frame


def run_rvalue(ctx: RunContext) -> pd.DataFrame:
  """r-values with ranks, flags and residuals."""
  dataset = load_dataset(ctx)
  spec, _ = resolve_prior(ctx, dataset)
  service = build_service(ctx, dataset, spec)
  with timed_stage("rvalues", ctx.timings):
    frame = service.rvalue_frame()
  ctx.diagnostics.update(service.diagnostics())
  emit_table(ctx, frame)
  write_dumps(ctx, service)
  return frame


def run_rank(ctx: RunContext) -> pd.DataFrame:
  """Full ranking table: r-value plus every baseline method."""
  dataset = load_dataset(ctx)
  spec, _ = resolve_prior(ctx, dataset)
  service = build_service(ctx, dataset, spec)
  with timed_stage("rank", ctx.timings):
    table = service.build_table(methods=ctx.config.methods, min_successes=ctx.config.min_successes)
  ctx.diagnostics.update(table.diagnostics)
  frame = table.to_frame()
  emit_table(ctx, frame)
  write_dumps(ctx, service)
  return frame


def run_curves(ctx: RunContext) -> pd.DataFrame:
  """Threshold curves per family on a sigma2 grid, for plotting."""
  config = ctx.config
  dataset = load_dataset(ctx) if config.input_path is not None else None
  spec, _ = resolve_prior(ctx, dataset)
  if not isinstance(spec.theta_law, NormalPrior) or spec.variance_law is None:
    raise ModelMismatchError(
      dataset.kind.value if dataset is not None else "prior-file",
      "threshold curves (need a normal prior and a variance law)",
    )
  methods = config.methods or DEFAULT_CURVE_METHODS
  alphas = np.asarray(config.alphas or DEFAULT_CURVE_ALPHAS, dtype=float)
  sigma2_grid = np.linspace(config.sigma2_max / config.sigma2_points, config.sigma2_max, config.sigma2_points)
  with timed_stage("threshold_curves", ctx.timings):
    frame = curves_frame(methods, alphas, sigma2_grid, spec.variance_law, prior=spec.theta_law, c=config.pvalue_c)
  emit_table(ctx, frame)
  return frame


def run_bench(ctx: RunContext) -> pd.DataFrame:
  """Run a Monte-Carlo study from a SimConfig file."""
  config = ctx.config
  sim = io_service.read_sim_config(config.bench_config_path)
  updates: Dict[str, Any] = {}
  if config.seed is not None:
    updates["seed"] = config.seed
  if config.study is not None:
    updates["study"] = config.study
  if updates:
    sim = sim.model_validate({**sim.model_dump(exclude_unset=True), **updates})
  ctx.seed = sim.seed
  ctx.diagnostics["sim_config"] = sim.model_dump(mode="json")

  train = full = None
  if sim.study == "validation" and sim.train_path is not None:
    with timed_stage("read_input", ctx.timings):
      train = io_service.read_units(sim.train_path)
      full = io_service.read_units(sim.full_path)
    ctx.data_hash = full.data_hash()
  with timed_stage(f"bench_{sim.study}", ctx.timings):
    frame = run_study(sim, train=train, full=full)
  emit_table(ctx, frame)
  return frame


COMMAND_HANDLERS: Dict[str, Callable[[RunContext], Optional[pd.DataFrame]]] = {
  "fit": run_fit,
  "tailprob": run_tailprob,
  "rvalue": run_rvalue,
  "rank": run_rank,
  "curves": run_curves,
  "bench": run_bench,
}


def default_manifest_path(config: RunConfig) -> Optional[Path]:
  """Manifest location: --manifest, else next to --out."""
  if config.manifest_out is not None:
    return config.manifest_out
  if config.out is not None:
    return config.out.with_name(f"{config.out.stem}.manifest.json")
  return None


def run_pipeline(config: RunConfig) -> PipelineResult:
  """Run one command end to end.

  Args:
    config: Resolved run configuration

  Returns:
    PipelineResult with exit code 0 and the artifacts written

  Raises:
    RankvalError: Any usage, data or numeric failure (the CLI maps it to an exit code)
  """
  run_id = new_run_id()
  started = datetime.now(timezone.utc)
  config.validate_paths()
  handler = COMMAND_HANDLERS.get(config.command)
  if handler is None:
    raise InvalidConfigError(f"Unknown command '{config.command}'")

  ctx = RunContext(config=config, config_hash=config.hash(), seed=config.seed)
  logger.info(f"Starting {config.command}", extra={"config_hash": ctx.config_hash})
  with timed_stage(config.command, ctx.timings):
    table = handler(ctx)

  manifest = RunManifest(
    app_name=settings.APP_NAME,
    version=settings.VERSION,
    command=config.command,
    config=config.model_dump(mode="json"),
    config_hash=ctx.config_hash,
    data_hash=ctx.data_hash,
    seed=ctx.seed,
    versions=package_versions(),
    outputs=dict(ctx.outputs),
    diagnostics=_json_safe(ctx.diagnostics),
    runtime=RunRuntime(run_id=run_id, started_at=started, timings_ms=ctx.timings),
  )
  manifest_path = default_manifest_path(config)
  if manifest_path is not None:
    io_service.write_json(manifest, manifest_path)
    ctx.outputs["manifest"] = str(manifest_path)
  logger.info(f"Finished {config.command}", extra={"outputs": list(ctx.outputs)})
  return PipelineResult(exit_code=0, outputs=ctx.outputs, manifest=manifest, table=table)


def _json_safe(value: Any) -> Any:
  if isinstance(value, dict):
    return {str(k): _json_safe(v) for k, v in value.items()}
  if isinstance(value, (list, tuple)):
    return [_json_safe(v) for v in value]
  if isinstance(value, np.generic):
    return value.item()
  if isinstance(value, float) and not np.isfinite(value):
    return None
  return value
