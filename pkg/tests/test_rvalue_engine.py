"""Tests for the r-value engine."""

import numpy as np
import pytest
from scipy import stats

from rankval.core.exceptions import InvalidConfigError, ModelMismatchError
from rankval.models.priors import GammaVar, NormalPrior, PointMassVar, PriorSpec
from rankval.models.results import AlphaGrid, LambdaCurve, RootFlag
from rankval.models.units import PayloadKind, dataset_from_columns
from rankval.services.rvalue_engine import (
  build_lambda_curve,
  build_v_matrix,
  closed_form_lambda,
  closed_form_rvalue,
  closed_form_rvalues,
  default_alpha_grid,
  gaussian_smoother,
  grid_rvalues,
  lambda_curve_for,
  model_lambda_curve,
  optimal_thresholds,
  point_mass_lambda,
  point_mass_rvalues,
  solve_rvalue,
)


def flat_curve(level: float, nodes: np.ndarray) -> LambdaCurve:
  grid = AlphaGrid(nodes)
  values = np.full(nodes.size, level)
  return LambdaCurve(grid=grid, raw=values, smoothed=values)


def homogeneous_population(n_units: int, sigma2: float, seed: int):
  rng = np.random.default_rng(seed)
  theta = rng.normal(0.0, 1.0, n_units)
  x = rng.normal(theta, np.sqrt(sigma2))
  ids = [f"h{i}" for i in range(n_units)]
  return dataset_from_columns(PayloadKind.NORMAL, ids, x=x, sigma2=np.full(n_units, sigma2))


class TestAlphaGrid:
  """Default grid construction."""

  def test_default_grid_shape(self):
    grid = default_alpha_grid()
    assert len(grid) == 199
    assert grid.min == pytest.approx(1e-4)
    assert grid.max == pytest.approx(0.9999)
    assert np.all(np.diff(grid.nodes) > 0)

  def test_upper_tail_is_geometric_in_one_minus_alpha(self):
    grid = default_alpha_grid()
    tail = 1.0 - grid.nodes[grid.nodes > 0.99]
    assert tail.size == 11
    ratios = tail[:-1] / tail[1:]
    np.testing.assert_allclose(ratios, ratios[0])

  def test_no_upper_tail_when_max_is_low(self):
    grid = default_alpha_grid(alpha_max=0.98)
    assert grid.max == pytest.approx(0.98)
    assert len(grid) == 199

  def test_two_thirds_of_nodes_below_split(self):
    grid = default_alpha_grid(size=30)
    assert int(np.sum(grid.nodes <= 0.5)) == 20

  def test_too_few_nodes(self):
    with pytest.raises(ValueError):
      default_alpha_grid(size=2)

  def test_bounds_must_be_ordered(self):
    with pytest.raises(ValueError):
      default_alpha_grid(alpha_min=0.6, alpha_split=0.5)


class TestLambdaCurve:
  """Crossing-level estimation."""

  def test_smoother_rows_sum_to_one(self):
    weights = gaussian_smoother(25, 3.0)
    np.testing.assert_allclose(weights.sum(axis=1), 1.0)

  def test_zero_bandwidth_is_identity(self):
    np.testing.assert_array_equal(gaussian_smoother(4, 0.0), np.eye(4))

  def test_linear_trend_passes_through_at_both_ends(self):
    line = 0.2 + 0.003 * np.arange(60)
    np.testing.assert_allclose(gaussian_smoother(60, 5.0) @ line, line, atol=1e-12)

  def test_tiny_bandwidth_falls_back_to_identity(self):
    np.testing.assert_allclose(gaussian_smoother(5, 1e-3), np.eye(5))

  def test_raw_values_are_column_quantiles(self, normal_population, standard_prior):
    dataset, _ = normal_population
    grid = default_alpha_grid(size=30)
    v = build_v_matrix(dataset, standard_prior, grid)
    curve = build_lambda_curve(v, grid, bandwidth=0.0)
    for j in (0, 12, 29):
      assert curve.raw[j] == pytest.approx(np.quantile(v[:, j], 1.0 - grid.nodes[j]))
    np.testing.assert_allclose(curve.smoothed, curve.raw)

  def test_small_population_is_flagged(self, standard_prior):
    dataset = homogeneous_population(20, 1.0, seed=1)
    grid = default_alpha_grid(size=30)
    curve = build_lambda_curve(build_v_matrix(dataset, standard_prior, grid), grid)
    assert any("unreliable" in w for w in curve.warnings)

  def test_isotonic_projection(self, normal_population, standard_prior):
    dataset, _ = normal_population
    grid = default_alpha_grid(size=40)
    curve = build_lambda_curve(build_v_matrix(dataset, standard_prior, grid), grid, isotonic="increasing")
    assert np.all(np.diff(curve.smoothed) >= -1e-12)

  def test_mismatched_grid_rejected(self):
    grid = default_alpha_grid(size=10)
    with pytest.raises(ValueError):
      build_lambda_curve(np.zeros((5, 9)), grid)

  def test_grid_lambda_tracks_point_mass_formula(self, standard_prior):
    dataset = homogeneous_population(20000, 1.0, seed=3)
    grid = default_alpha_grid()
    curve = build_lambda_curve(build_v_matrix(dataset, standard_prior, grid), grid)
    inner = (grid.nodes > 0.02) & (grid.nodes < 0.9)
    np.testing.assert_allclose(curve.smoothed[inner], point_mass_lambda(grid.nodes[inner], 1.0), atol=0.02)


class TestSolveRValue:
  """Root finding against a fixed curve."""

  nodes = np.linspace(0.01, 0.99, 99)

  def test_crossing_in_the_interior(self):
    result = solve_rvalue(lambda a: np.asarray(a, dtype=float), flat_curve(0.5, self.nodes), unit_id="toy")
    assert result.ids == ("toy",)
    assert result.rvalue[0] == pytest.approx(0.5, abs=2e-6)
    assert result.flags[0] is RootFlag.OK
    assert abs(result.residual[0]) < 1e-5

  def test_crossing_at_the_first_node(self):
    result = solve_rvalue(lambda a: np.ones_like(np.asarray(a, dtype=float)), flat_curve(0.5, self.nodes))
    assert result.rvalue[0] == pytest.approx(0.01)
    assert result.flags[0] is RootFlag.AT_BOUNDARY_TOP

  def test_no_crossing(self):
    result = solve_rvalue(lambda a: np.zeros_like(np.asarray(a, dtype=float)), flat_curve(0.5, self.nodes))
    assert result.rvalue[0] == 1.0
    assert result.flags[0] is RootFlag.NO_CROSSING

  def test_smallest_of_several_roots(self):
    high = (self.nodes < 0.195) | ((self.nodes >= 0.395) & (self.nodes < 0.595))
    levels = np.where(high, 0.8, 0.4)
    curve = LambdaCurve(grid=AlphaGrid(self.nodes), raw=levels, smoothed=levels)
    result = solve_rvalue(lambda a: np.full(np.shape(a), 0.5), curve)
    assert result.multiple_roots[0]
    assert 0.19 < result.rvalue[0] <= 0.2


class TestGridRValues:
  """End-to-end grid algorithm."""

  def test_values_in_unit_interval(self, normal_population, standard_prior):
    dataset, _ = normal_population
    result, v, curve = grid_rvalues(dataset, standard_prior, grid=default_alpha_grid(size=60))
    assert v.shape == (400, 60)
    assert len(curve.grid) == 60
    assert np.all((result.rvalue > 0) & (result.rvalue <= 1))
    assert result.ids == dataset.ids

  def test_equal_variances_preserve_measurement_order(self, standard_prior):
    dataset = homogeneous_population(2000, 0.5, seed=9)
    result, _, _ = grid_rvalues(dataset, standard_prior)
    order = np.argsort(-dataset.x)
    assert np.all(np.diff(result.rvalue[order]) >= -2e-6)

  @pytest.mark.slow
  def test_grid_matches_point_mass_closed_form(self, standard_prior):
    dataset = homogeneous_population(20000, 1.0, seed=4)
    result, _, _ = grid_rvalues(dataset, standard_prior)
    exact = point_mass_rvalues(dataset.x, 1.0, standard_prior)
    inner = (exact > 0.05) & (exact < 0.9)
    np.testing.assert_allclose(result.rvalue[inner], exact[inner], atol=0.02)


class TestClosedForm:
  """Normal data with a variance law."""

  def test_point_mass_rvalue_formula(self, standard_prior):
    x = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_allclose(point_mass_rvalues(x, 1.0, standard_prior), stats.norm.sf(x / np.sqrt(2.0)))

  def test_point_mass_lambda_agrees_with_size_solve(self):
    alphas = np.array([0.05, 0.2, 0.6])
    np.testing.assert_allclose(closed_form_lambda(alphas, PointMassVar(2.0)), point_mass_lambda(alphas, 2.0), atol=1e-7)

  def test_batch_matches_point_mass_formula(self, standard_prior):
    x = np.linspace(-3, 3, 13)
    batch = closed_form_rvalues(x, np.full(13, 1.0), standard_prior, PointMassVar(1.0))
    np.testing.assert_allclose(batch, point_mass_rvalues(x, 1.0, standard_prior), atol=1e-6)

  def test_batch_respects_prior_scale(self):
    prior = NormalPrior(2.0, 4.0)
    x = np.array([0.0, 2.0, 5.0])
    batch = closed_form_rvalues(x, np.full(3, 4.0), prior, PointMassVar(4.0))
    np.testing.assert_allclose(batch, stats.norm.sf((x - 2.0) / 2.0 / np.sqrt(2.0)), atol=1e-6)

  @pytest.mark.slow
  def test_scalar_matches_batch_under_gamma_law(self, standard_prior, gamma_law):
    x = np.array([2.5, 0.3, -1.0])
    sigma2 = np.array([0.2, 1.5, 0.8])
    batch = closed_form_rvalues(x, sigma2, standard_prior, gamma_law)
    for i in range(3):
      assert closed_form_rvalue(x[i], sigma2[i], standard_prior, gamma_law) == pytest.approx(batch[i], abs=1e-5)

  def test_optimal_threshold_shape(self, gamma_law):
    thresholds = optimal_thresholds(np.array([0.05, 0.1]), np.array([0.1, 1.0, 4.0]), gamma_law)
    assert thresholds.shape == (2, 3)
    assert np.all(thresholds[0] > thresholds[1])

  def test_point_mass_threshold_is_a_fixed_measurement_cutoff(self):
    thresholds = optimal_thresholds(np.array([0.1]), np.array([1.0]), PointMassVar(1.0))
    assert thresholds[0, 0] == pytest.approx(stats.norm.isf(0.1) * np.sqrt(2.0), abs=1e-6)

  @pytest.mark.slow
  def test_grid_matches_closed_form_under_gamma_law(self, standard_prior, gamma_law):
    rng = np.random.default_rng(12)
    n_units = 20000
    sigma2 = gamma_law.sample(rng, n_units)
    x = rng.normal(rng.normal(0.0, 1.0, n_units), np.sqrt(sigma2))
    dataset = dataset_from_columns(PayloadKind.NORMAL, [f"g{i}" for i in range(n_units)], x=x, sigma2=sigma2)
    grid_result, _, _ = grid_rvalues(dataset, standard_prior, lambda_source="empirical")
    exact = closed_form_rvalues(x, sigma2, standard_prior, gamma_law)
    # Column quantiles follow the sample, so agreement is bounded by the sampling error of its CDF.
    np.testing.assert_allclose(grid_result.rvalue, exact, atol=0.02)


def gamma_population(n_units: int, cv: float, seed: int):
  rng = np.random.default_rng(seed)
  law = GammaVar.from_mean_cv(1.0, cv)
  sigma2 = law.sample(rng, n_units)
  x = rng.normal(rng.normal(0.0, 1.0, n_units), np.sqrt(sigma2))
  dataset = dataset_from_columns(PayloadKind.NORMAL, [f"c{i}" for i in range(n_units)], x=x, sigma2=sigma2)
  return dataset, law


class TestModelLambda:
  """lambda from the fitted normal model."""

  def test_matches_closed_form_lambda_with_a_variance_law(self, standard_prior, gamma_law):
    dataset, _ = gamma_population(50, 0.5, seed=1)
    grid = default_alpha_grid(size=40)
    curve = model_lambda_curve(dataset, PriorSpec(standard_prior, gamma_law), grid)
    np.testing.assert_allclose(curve.smoothed, closed_form_lambda(grid.nodes, gamma_law), atol=1e-10)
    np.testing.assert_array_equal(curve.raw, curve.smoothed)

  def test_point_mass_law_reproduces_the_analytic_curve(self, standard_prior):
    dataset = homogeneous_population(50, 1.0, seed=2)
    grid = default_alpha_grid()
    curve = model_lambda_curve(dataset, PriorSpec(standard_prior, PointMassVar(1.0)), grid)
    np.testing.assert_allclose(curve.smoothed, point_mass_lambda(grid.nodes, 1.0), atol=1e-6)

  def test_units_own_variances_stand_in_for_a_missing_law(self, standard_prior):
    dataset, law = gamma_population(20000, 1.0, seed=3)
    grid = default_alpha_grid(size=60)
    curve = model_lambda_curve(dataset, standard_prior, grid)
    inner = (grid.nodes > 0.01) & (grid.nodes < 0.99)
    np.testing.assert_allclose(curve.smoothed[inner], closed_form_lambda(grid.nodes[inner], law), atol=0.01)

  def test_binomial_data_rejected(self, binomial_population, nba_prior):
    dataset, _ = binomial_population
    with pytest.raises(ModelMismatchError):
      model_lambda_curve(dataset, nba_prior, default_alpha_grid(size=10))

  def test_unknown_source_rejected(self, normal_population, standard_prior):
    dataset, _ = normal_population
    grid = default_alpha_grid(size=10)
    with pytest.raises(InvalidConfigError):
      lambda_curve_for(dataset, standard_prior, np.zeros((400, 10)), grid, lambda_source="bootstrap")

  def test_r_values_above_the_old_top_node_stay_below_one(self, standard_prior):
    dataset = homogeneous_population(2000, 1.0, seed=5)
    spec = PriorSpec(standard_prior, PointMassVar(1.0))
    result, _, _ = grid_rvalues(dataset, spec, lambda_source="model")
    exact = point_mass_rvalues(dataset.x, 1.0, standard_prior)
    np.testing.assert_allclose(result.rvalue, exact, atol=1e-3)
    high = (exact > 0.995) & (exact < 0.9999)
    assert high.any()
    assert np.all(result.rvalue[high] < 1.0)

  @pytest.mark.slow
  @pytest.mark.parametrize("cv", [0.5, 1.0, 2.0])
  def test_grid_and_closed_form_agree_over_the_whole_range(self, standard_prior, cv):
    dataset, law = gamma_population(100_000, cv, seed=int(10 * cv))
    result, _, _ = grid_rvalues(dataset, PriorSpec(standard_prior, law), lambda_source="model")
    exact = closed_form_rvalues(dataset.x, dataset.sigma2, standard_prior, law)
    assert np.max(np.abs(result.rvalue - exact)) < 1e-3
