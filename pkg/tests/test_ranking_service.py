"""Tests for RankingService."""

import numpy as np
import pandas as pd
import pytest

from rankval.core.exceptions import InvalidConfigError, ModelMismatchError
from rankval.models.priors import BetaPrior, PriorSpec
from rankval.models.results import Orientation
from rankval.services.ranking_service import RankingService
from rankval.services.rvalue_engine import default_alpha_grid


@pytest.fixture
def binomial_service(binomial_population):
  dataset, _ = binomial_population
  return RankingService(dataset, BetaPrior(15.0, 5.0), grid=default_alpha_grid(size=60))


class TestRankingTable:
  """Tables built from the grid engine."""

  def test_rvalue_first_then_methods(self, binomial_service):
    table = binomial_service.build_table()
    assert table.methods == ["rvalue", "mle", "pm", "per", "pvalue"]
    assert table.orientations["rvalue"] is Orientation.SMALLER_IS_BETTER

  def test_ranks_are_permutations(self, binomial_service):
    table = binomial_service.build_table()
    for method in table.methods:
      assert sorted(table.ranks[method]) == list(range(1, 301))

  def test_frame_columns(self, binomial_service):
    frame = binomial_service.build_table(methods=["mle"], min_successes=100).to_frame()
    assert list(frame.columns) == [
      "id",
      "rvalue",
      "rank_rvalue",
      "mle",
      "rank_mle",
      "rvalue_flags",
      "rvalue_residual",
      "rvalue_multiple_roots",
      "shift_mle",
      "qualified_rank",
    ]

  def test_shift_is_zero_when_ranks_agree(self, binomial_service):
    table = binomial_service.build_table(methods=["mle"])
    same = table.ranks["mle"] == table.ranks["rvalue"]
    np.testing.assert_array_equal(table.extra_columns["shift_mle"][same], 0.0)

  def test_qualified_ranks(self, binomial_service):
    table = binomial_service.build_table(methods=["pm"], min_successes=150)
    qualified = table.extra_columns["qualified_rank"]
    eligible = binomial_service.dataset.y >= 150
    assert qualified.isna().sum() == int((~eligible).sum())
    kept = np.asarray(qualified[eligible], dtype=int)
    assert sorted(kept) == list(range(1, eligible.sum() + 1))
    order_by_rvalue = np.argsort(table.ranks["rvalue"][eligible])
    np.testing.assert_array_equal(kept[order_by_rvalue], np.arange(1, eligible.sum() + 1))

  def test_min_successes_requires_binomial(self, normal_population, standard_prior):
    dataset, _ = normal_population
    service = RankingService(dataset, standard_prior, grid=default_alpha_grid(size=40))
    with pytest.raises(InvalidConfigError):
      service.build_table(min_successes=3)

  def test_unknown_method(self, binomial_service):
    with pytest.raises(InvalidConfigError):
      binomial_service.build_table(methods=["median"])

  def test_rvalues_are_cached(self, binomial_service):
    assert binomial_service.rvalues() is binomial_service.rvalues()
    assert binomial_service.v_matrix.shape == (300, 60)

  def test_rvalue_frame(self, binomial_service):
    frame = binomial_service.rvalue_frame()
    assert list(frame.columns) == ["id", "rvalue", "rank", "flags", "residual", "multiple_roots"]
    top = frame.loc[frame["rank"] == 1, "rvalue"].iloc[0]
    assert top == pytest.approx(frame["rvalue"].min())

  def test_diagnostics(self, binomial_service):
    info = binomial_service.diagnostics()
    assert info["engine"] == "grid"
    assert info["grid_size"] == 60
    assert info["n_units"] == 300
    assert info["prior"] == {"a": 15.0, "b": 5.0}


class TestEngines:
  """Engine selection."""

  def test_unknown_engine(self, binomial_population):
    dataset, _ = binomial_population
    with pytest.raises(InvalidConfigError):
      RankingService(dataset, BetaPrior(15.0, 5.0), engine="exact")

  def test_closed_form_needs_variance_law(self, normal_population, standard_prior):
    dataset, _ = normal_population
    with pytest.raises(ModelMismatchError):
      RankingService(dataset, standard_prior, engine="closed-form")

  def test_closed_form_needs_normal_data(self, binomial_population, gamma_law):
    dataset, _ = binomial_population
    with pytest.raises(ModelMismatchError):
      RankingService(dataset, PriorSpec(BetaPrior(15.0, 5.0), gamma_law), engine="closed-form")

  def test_closed_form_tracks_grid(self, normal_population, standard_prior, gamma_law):
    dataset, _ = normal_population
    spec = PriorSpec(standard_prior, gamma_law)
    exact = RankingService(dataset, spec, engine="closed-form").rvalues().rvalue
    grid = RankingService(dataset, spec).rvalues().rvalue
    assert np.all((exact > 0) & (exact <= 1))
    assert pd.Series(exact).corr(pd.Series(grid), method="spearman") > 0.98
