"""Command-line front end: ``rankval <command> [options]``.

Commands: fit, tailprob, rvalue, rank, curves, bench.

Exit codes: 0 success, 1 internal error, 2 usage error, 3 data error,
4 numeric failure. Failures print a JSON error document on stderr.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, NoReturn, Optional

from pydantic import ValidationError

from rankval.config import settings
from rankval.core.exceptions import EXIT_USAGE, InternalError, InvalidConfigError, RankvalError
from rankval.core.tracing import configure_logging
from rankval.schemas.run import RunConfig
from rankval.services.pipeline import run_pipeline

logger = logging.getLogger("rankval.cli")


def _csv_floats(value: str) -> List[float]:
  try:
    return [float(v) for v in value.split(",") if v.strip()]
  except ValueError:
    raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{value}'") from None


def _csv_words(value: str) -> List[str]:
  return [v.strip().lower() for v in value.split(",") if v.strip()]


def _add_input_args(parser: argparse.ArgumentParser, required: bool = True) -> None:
  parser.add_argument("--in", dest="input_path", type=Path, required=required, help="Unit table CSV")
  parser.add_argument(
    "--draws",
    dest="draws_path",
    type=Path,
    help="Sidecar draws: CSV keyed by id, or a headerless matrix (.csv or .npy) in unit order",
  )
  parser.add_argument("--model", choices=["normal", "binomial", "draws"], help="Payload kind (inferred when omitted)")


def _add_prior_args(parser: argparse.ArgumentParser) -> None:
  parser.add_argument(
    "--prior", dest="prior_source", choices=["fit", "file"], default="fit", help="Fit the prior or load it"
  )
  parser.add_argument("--prior-file", dest="prior_path", type=Path, help="Fitted-prior JSON for --prior file")
  parser.add_argument(
    "--variance-family",
    choices=["gamma", "invgamma", "empirical"],
    default="gamma",
    help="Variance law fitted for normal data",
  )
  parser.add_argument("--prior-out", type=Path, help="Also write the prior JSON here")


def _add_engine_args(parser: argparse.ArgumentParser) -> None:
  parser.add_argument("--grid-size", type=int, help=f"Alpha grid nodes (default {settings.GRID_SIZE})")
  parser.add_argument(
    "--smooth-bandwidth",
    type=float,
    help=f"Lambda smoothing bandwidth in nodes (default {settings.SMOOTH_BANDWIDTH})",
  )
  parser.add_argument("--isotonic", choices=["off", "increasing", "decreasing"], help="Isotonic projection of lambda")
  parser.add_argument(
    "--lambda-source",
    choices=["empirical", "model"],
    help=f"Lambda from column quantiles or the fitted normal model (default {settings.LAMBDA_SOURCE})",
  )
  parser.add_argument("--engine", choices=["grid", "closed-form"], default="grid", help="r-value engine")
  parser.add_argument("--dump-lambda", type=Path, help="Write the lambda curve CSV")
  parser.add_argument("--dump-v", type=Path, help="Write the V matrix CSV (long format)")


def _add_output_args(parser: argparse.ArgumentParser) -> None:
  parser.add_argument("--out", type=Path, help="Output file (stdout when omitted)")
  parser.add_argument("--manifest", dest="manifest_out", type=Path, help="Run manifest JSON (default: next to --out)")


class RankvalArgumentParser(argparse.ArgumentParser):
  """ArgumentParser that raises InvalidConfigError instead of exiting.

  Subparsers inherit the class, so bad flags anywhere end in the same
  JSON error document as every other usage failure.
  """

  def error(self, message: str) -> NoReturn:
    """Raise instead of printing usage and exiting with status 2."""
    raise InvalidConfigError(f"{self.prog}: {message}", details={"usage": self.format_usage().strip()})


def build_parser() -> argparse.ArgumentParser:
  """Build the argument parser with one subparser per command."""
  parser = RankvalArgumentParser(prog="rankval", description="Empirical-Bayes ranking with r-values.")
  parser.add_argument("--log-level", default=None, help=f"Logging level (default {settings.LOG_LEVEL})")
  parser.add_argument("--version", action="version", version=f"%(prog)s {settings.VERSION}")
  commands = parser.add_subparsers(dest="command", required=True)

  fit = commands.add_parser("fit", help="Fit the population prior by marginal maximum likelihood")
  _add_input_args(fit)
  _add_prior_args(fit)
  _add_output_args(fit)

  tailprob = commands.add_parser("tailprob", help="Posterior tail probabilities V_alpha per unit")
  _add_input_args(tailprob)
  _add_prior_args(tailprob)
  tailprob.add_argument("--alphas", type=_csv_floats, required=True, help="Comma-separated alphas in (0, 1)")
  _add_output_args(tailprob)

  rvalue = commands.add_parser("rvalue", help="r-values with ranks, flags and residuals")
  _add_input_args(rvalue)
  _add_prior_args(rvalue)
  _add_engine_args(rvalue)
  _add_output_args(rvalue)

  rank = commands.add_parser("rank", help="Ranking table: r-value plus baseline methods")
  _add_input_args(rank)
  _add_prior_args(rank)
  _add_engine_args(rank)
  rank.add_argument("--methods", type=_csv_words, help="Baseline methods (mle,pm,per,pv,pvalue,bf)")
  rank.add_argument("--pvalue-c", type=float, default=0.0, help="Benchmark null for PV and normal p-values")
  rank.add_argument("--min-successes", type=int, help="Qualified rank only for units with y >= k")
  _add_output_args(rank)

  curves = commands.add_parser("curves", help="Threshold curves for plotting")
  _add_input_args(curves, required=False)
  _add_prior_args(curves)
  curves.add_argument("--methods", type=_csv_words, help="Families (mle,pv0,pvc,pm,per,bf,maxagree)")
  curves.add_argument("--alphas", type=_csv_floats, help="Comma-separated alphas")
  curves.add_argument("--pvalue-c", type=float, default=0.0, help="Benchmark c for the pvc family")
  curves.add_argument("--sigma2-max", type=float, default=4.0, help="Largest sigma2 on the grid")
  curves.add_argument("--sigma2-points", type=int, default=100, help="Points on the sigma2 grid")
  _add_output_args(curves)

  bench = commands.add_parser("bench", help="Monte-Carlo benchmark studies")
  bench.add_argument("--config", dest="bench_config_path", type=Path, required=True, help="Study config JSON")
  bench.add_argument("--study", choices=["enrichment", "agreement", "validation"], help="Override the config's study")
  bench.add_argument("--seed", type=int, help="Override the config's seed")
  _add_output_args(bench)
  return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
  """Turn parsed arguments into a validated RunConfig.

  Raises:
    InvalidConfigError: Flags are inconsistent
  """
  fields = {k: v for k, v in vars(args).items() if k != "log_level" and v is not None}
  try:
    return RunConfig(**fields)
  except ValidationError as e:
    raise InvalidConfigError(
      "Invalid command-line options",
      details={"errors": [{"loc": list(err["loc"]), "msg": err["msg"]} for err in e.errors()]},
    ) from None


def emit_error(error: RankvalError) -> None:
  """Print the machine-readable error document on stderr."""
  sys.stderr.write(json.dumps(error.to_dict(), default=str) + "\n")


def main(argv: Optional[List[str]] = None) -> int:
  """CLI entry point.

  Args:
    argv: Arguments (sys.argv[1:] when None)

  Returns:
    Process exit code
  """
  parser = build_parser()
  try:
    args = parser.parse_args(argv)
  except InvalidConfigError as e:
    emit_error(e)
    return e.exit_code
  except SystemExit as e:
    return EXIT_USAGE if e.code else 0
  configure_logging(args.log_level)

  try:
    config = config_from_args(args)
    result = run_pipeline(config)
    return result.exit_code
  except RankvalError as e:
    logger.error(f"{e.error_code}: {e.message}", extra={"details": e.details})
    emit_error(e)
    return e.exit_code
  except Exception as e:
    logger.error(f"Unexpected error: {e}", exc_info=True)
    error = InternalError(str(e), details={"type": type(e).__name__})
    emit_error(error)
    return error.exit_code


if __name__ == "__main__":
  sys.exit(main())
