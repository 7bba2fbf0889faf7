"""Custom exceptions for rankval.

This module defines a hierarchy of custom exceptions with error codes,
process exit codes and user-friendly messages so the library and the CLI
report failures consistently.
"""

from typing import Any, Dict, List, Optional

EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class RankvalError(Exception):
  """Base exception for all rankval errors.

  Attributes:
    message: User-friendly error message
    error_code: Machine-readable error code
    exit_code: Process exit status used by the CLI
    details: Additional error details (optional)
  """

  def __init__(
    self,
    message: str,
    error_code: str,
    exit_code: int = EXIT_INTERNAL,
    details: Optional[Dict[str, Any]] = None,
  ):
    """Initialize base error with common fields."""
    self.message = message
    self.error_code = error_code
    self.exit_code = exit_code
    self.details = details or {}
    super().__init__(self.message)

  def to_dict(self) -> Dict[str, Any]:
    """Convert exception to dictionary for the CLI error document."""
    response: Dict[str, Any] = {
      "error": {
        "message": self.message,
        "code": self.error_code,
      }
    }
    if self.details:
      response["error"]["details"] = self.details
    return response


# ============================================================================
# Exit-code families
# ============================================================================

class UsageError(RankvalError):
  """Command line or configuration misuse (exit 2)."""

  def __init__(self, message: str, error_code: str = "InvalidConfig", details: Optional[Dict[str, Any]] = None):
    """Build usage error with optional detail payload."""
    super().__init__(message=message, error_code=error_code, exit_code=EXIT_USAGE, details=details)


class DataError(RankvalError):
  """Input data violates a model invariant (exit 3)."""

  def __init__(self, message: str, error_code: str = "InvalidData", details: Optional[Dict[str, Any]] = None):
    """Build data error with optional detail payload."""
    super().__init__(message=message, error_code=error_code, exit_code=EXIT_DATA, details=details)


class NumericError(RankvalError):
  """A numerical routine failed (exit 4)."""

  def __init__(self, message: str, error_code: str = "NumericFailure", details: Optional[Dict[str, Any]] = None):
    """Build numeric error with optional detail payload."""
    super().__init__(message=message, error_code=error_code, exit_code=EXIT_NUMERIC, details=details)


class InternalError(RankvalError):
  """Unexpected failure (exit 1)."""

  def __init__(self, message: str = "Internal error", details: Optional[Dict[str, Any]] = None):
    """Build internal error with optional details."""
    super().__init__(message=message, error_code="InternalError", exit_code=EXIT_INTERNAL, details=details)


# ============================================================================
# Usage errors
# ============================================================================

class InvalidConfigError(UsageError):
  """A run or simulation config failed validation."""

  def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
    """Build invalid-config error."""
    super().__init__(message=message, error_code="InvalidConfig", details=details)


class MissingInputError(UsageError):
  """An input path does not exist or is unreadable."""

  def __init__(self, path: str):
    """Build missing-input error for a path."""
    super().__init__(
      message=f"Input file not found: {path}",
      error_code="MissingInput",
      details={"path": path},
    )


# ============================================================================
# Data errors
# ============================================================================

class EmptyDatasetError(DataError):
  """No units were supplied."""

  def __init__(self, source: Optional[str] = None):
    """Build empty-dataset error, optionally naming the source."""
    super().__init__(
      message="Dataset contains no units",
      error_code="EmptyDataset",
      details={"source": source} if source else None,
    )


class MixedPayloadKindsError(DataError):
  """Units carry more than one payload kind."""

  def __init__(self, kinds: List[str]):
    """Build mixed-kinds error listing the kinds seen."""
    super().__init__(
      message=f"Dataset mixes payload kinds: {', '.join(sorted(kinds))}",
      error_code="MixedPayloadKinds",
      details={"kinds": sorted(kinds)},
    )


class InvalidUnitError(DataError):
  """One or more units violate their payload invariants."""

  def __init__(self, violations: List[Dict[str, str]]):
    """Build invalid-unit error with one entry per offending unit."""
    first = violations[0] if violations else {"id": "?", "message": "unknown"}
    super().__init__(
      message=f"{len(violations)} invalid unit(s); first: {first['id']}: {first['message']}",
      error_code="InvalidUnit",
      details={"violations": violations},
    )


class DegenerateDataError(DataError):
  """Data carry no information for the requested fit."""

  def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
    """Build degenerate-data error."""
    super().__init__(message=message, error_code="DegenerateData", details=details)


class TooFewDrawsError(DataError):
  """Too few draws to build an empirical law."""

  def __init__(self, count: int, minimum: int):
    """Build too-few-draws error."""
    super().__init__(
      message=f"Need at least {minimum} draws, got {count}",
      error_code="TooFewDraws",
      details={"count": count, "minimum": minimum},
    )


class ThetaOutOfRangeError(DataError):
  """A Beta-model threshold lies outside (0, 1)."""

  def __init__(self, theta: float):
    """Build out-of-range error for a threshold value."""
    super().__init__(
      message=f"Threshold {theta} lies outside (0, 1)",
      error_code="ThetaOutOfRange",
      details={"theta": theta},
    )


class MismatchedUnitIdsError(DataError):
  """Two datasets that must cover the same units do not."""

  def __init__(self, only_left: List[str], only_right: List[str]):
    """Build mismatch error listing a sample of the differing ids."""
    super().__init__(
      message=f"Unit ids differ ({len(only_left)} only in first, {len(only_right)} only in second)",
      error_code="MismatchedUnitIds",
      details={"only_first": only_left[:20], "only_second": only_right[:20]},
    )


class ModelMismatchError(DataError):
  """Payload kind and prior family cannot be combined."""

  def __init__(self, kind: str, prior: str):
    """Build model-mismatch error."""
    super().__init__(
      message=f"Payload kind '{kind}' cannot be used with prior '{prior}'",
      error_code="ModelMismatch",
      details={"kind": kind, "prior": prior},
    )


class BFUndefinedError(DataError):
  """Bayes-factor ranking requested for a non-normal model."""

  def __init__(self, kind: str):
    """Build BF-undefined error."""
    super().__init__(
      message=f"Bayes-factor ranking is only defined for normal data, not '{kind}'",
      error_code="BFUndefined",
      details={"kind": kind},
    )


# ============================================================================
# Numeric errors
# ============================================================================

class NonConvergenceError(NumericError):
  """An optimizer stopped without meeting its tolerance."""

  def __init__(self, routine: str, details: Optional[Dict[str, Any]] = None):
    """Build non-convergence error for a routine."""
    super().__init__(
      message=f"{routine} did not converge",
      error_code="NonConvergence",
      details={**(details or {}), "routine": routine},
    )


class QuadratureFailureError(NumericError):
  """An adaptive quadrature did not reach its tolerance."""

  def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
    """Build quadrature-failure error."""
    super().__init__(message=message, error_code="QuadratureFailure", details=details)


class NoBracketError(NumericError):
  """No sign change could be bracketed for a root solve."""

  def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
    """Build no-bracket error."""
    super().__init__(message=message, error_code="NoBracket", details=details)


# ============================================================================
# Error Code Reference
# ============================================================================

ERROR_CODE_REFERENCE = {
  # Usage (exit 2)
  "InvalidConfig": "A flag or config file value is invalid",
  "MissingInput": "An input file does not exist",

  # Data (exit 3)
  "InvalidData": "Input data are invalid",
  "EmptyDataset": "The input contains no units",
  "MixedPayloadKinds": "All units must share one payload kind",
  "InvalidUnit": "At least one unit violates its payload invariants",
  "DegenerateData": "The data carry no information for this fit",
  "TooFewDraws": "Not enough draws for an empirical law",
  "ThetaOutOfRange": "A Beta-model threshold lies outside (0, 1)",
  "MismatchedUnitIds": "Paired datasets do not cover the same units",
  "ModelMismatch": "Payload kind and prior family are incompatible",
  "BFUndefined": "Bayes-factor ranking needs normal data",

  # Numeric (exit 4)
  "NumericFailure": "A numerical routine failed",
  "NonConvergence": "An optimizer did not converge",
  "QuadratureFailure": "A variance-law integral did not converge",
  "NoBracket": "No root bracket could be found",

  # Internal (exit 1)
  "InternalError": "An unexpected error occurred",
}
