"""Pytest configuration: .env loading and shared datasets."""

import os
from pathlib import Path

import numpy as np
import pytest
from dotenv import load_dotenv

from rankval.models.priors import BetaPrior, GammaVar, NormalPrior, PointMassVar
from rankval.models.units import PayloadKind, dataset_from_columns

ROOT_DIR = Path(__file__).resolve().parent.parent
FIXTURE_DIR = ROOT_DIR / "data" / "fixtures"


def pytest_configure(config):
  """Load environment variables from the root .env file before running tests."""
  env_file = ROOT_DIR / ".env"
  if env_file.exists():
    load_dotenv(env_file)


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
  """Directory holding data fixtures (overridable with RANKVAL_FIXTURE_DIR)."""
  return Path(os.environ.get("RANKVAL_FIXTURE_DIR", FIXTURE_DIR))


@pytest.fixture(scope="session")
def nba_leaders_path(fixture_dir: Path) -> Path:
  """Bundled leaders table."""
  return fixture_dir / "nba_2013_14_leaders.csv"


@pytest.fixture
def nba_prior() -> BetaPrior:
  """Published Beta prior for the season's free-throw abilities."""
  return BetaPrior(15.12, 5.38)


@pytest.fixture
def standard_prior() -> NormalPrior:
  """Standard normal prior."""
  return NormalPrior(0.0, 1.0)


@pytest.fixture
def gamma_law() -> GammaVar:
  """Gamma variance law with mean 1 and shape 4."""
  return GammaVar(shape=4.0, rate=4.0)


@pytest.fixture
def point_law() -> PointMassVar:
  """Homogeneous variance law."""
  return PointMassVar(1.0)


@pytest.fixture
def normal_population():
  """Normal/normal population of 400 units under a Gamma(4, 4) variance law."""
  rng = np.random.default_rng(20140417)
  n = 400
  theta = rng.normal(0.0, 1.0, n)
  sigma2 = rng.gamma(4.0, 0.25, n)
  x = rng.normal(theta, np.sqrt(sigma2))
  ids = [f"u{i:03d}" for i in range(n)]
  return dataset_from_columns(PayloadKind.NORMAL, ids, x=x, sigma2=sigma2), theta


@pytest.fixture
def binomial_population():
  """Beta-binomial population of 300 units from Beta(15, 5)."""
  rng = np.random.default_rng(461)
  n_units = 300
  theta = rng.beta(15.0, 5.0, n_units)
  trials = rng.integers(5, 400, n_units)
  y = rng.binomial(trials, theta)
  ids = [f"p{i:03d}" for i in range(n_units)]
  return dataset_from_columns(PayloadKind.BINOMIAL, ids, y=y, n=trials), theta
