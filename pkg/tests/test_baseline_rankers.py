"""Tests for baseline ranking variables and threshold families."""

import numpy as np
import pytest
from scipy import integrate, stats

from rankval.core.exceptions import BFUndefinedError, ModelMismatchError, NoBracketError
from rankval.models.priors import NormalPrior, PointMassVar
from rankval.models.results import Orientation
from rankval.models.units import BinomialObs, PayloadKind, UnitRecord, dataset_from_columns, validate_dataset
from rankval.services.baseline_rankers import (
  ThresholdFamilies,
  binomial_pvalues,
  curves_frame,
  exceedance_fractions,
  normal_log_bayes_factor,
  ranking_variable,
  ranking_variables,
  solve_u_alpha,
  threshold_curves,
)


class TestThresholdFamilies:
  """Registry lookups."""

  def test_registry_lists_every_family(self):
    assert ThresholdFamilies.methods() == ["mle", "pv0", "pvc", "pm", "per", "bf", "maxagree"]

  def test_lookup_is_case_insensitive(self):
    assert ThresholdFamilies.get("MLE").method == "mle"

  def test_unknown_family(self):
    with pytest.raises(ValueError):
      ThresholdFamilies.get("median")


class TestSizeConstraint:
  """Calibrating u_alpha."""

  @pytest.mark.parametrize("alpha", [0.01, 0.1, 0.4])
  def test_mle_under_point_mass(self, alpha):
    solution = solve_u_alpha("mle", alpha, PointMassVar(1.0))
    assert solution.u[0] == pytest.approx(stats.norm.isf(alpha) * np.sqrt(2.0), abs=1e-6)

  def test_pm_under_point_mass(self):
    solution = solve_u_alpha("pm", 0.1, PointMassVar(3.0))
    assert solution.u[0] == pytest.approx(stats.norm.isf(0.1) / 2.0, abs=1e-6)

  def test_gamma_law_meets_size(self, gamma_law):
    solution = solve_u_alpha("mle", 0.1, gamma_law)
    u = solution.u[0]
    mass, _ = integrate.quad(lambda s: stats.norm.sf(u / np.sqrt(s + 1.0)) * gamma_law.pdf(np.array([s]))[0], 0, np.inf)
    assert mass == pytest.approx(0.1, abs=1e-7)
    assert abs(solution.residual[0]) < 1e-8

  def test_vector_alphas(self, gamma_law):
    solution = solve_u_alpha("per", np.array([0.05, 0.2, 0.5]), gamma_law)
    assert solution.u.shape == (3,)
    assert np.all(np.diff(solution.u) < 0)

  def test_maxagree_meets_size(self, gamma_law):
    solution = solve_u_alpha("maxagree", np.array([0.05, 0.2]), gamma_law)
    assert np.all(np.abs(solution.residual) < 1e-8)

  def test_bf_cannot_select_half(self, gamma_law):
    with pytest.raises(NoBracketError):
      solve_u_alpha("bf", 0.6, gamma_law)

  def test_alpha_out_of_range(self, gamma_law):
    with pytest.raises(ValueError):
      solve_u_alpha("mle", 1.0, gamma_law)

  def test_exceedance_fractions_near_alpha(self, gamma_law):
    rng = np.random.default_rng(21)
    s = gamma_law.sample(rng, 40000)
    z = rng.normal(0.0, np.sqrt(s + 1.0))
    fractions = exceedance_fractions(z, s, "pm", np.array([0.05, 0.2]), gamma_law)
    np.testing.assert_allclose(fractions, [0.05, 0.2], atol=0.01)


class TestThresholdCurves:
  """Curves for plotting."""

  def test_mle_curve_is_flat(self, gamma_law):
    curves = threshold_curves("mle", np.array([0.1]), np.array([0.1, 1.0, 3.0]), gamma_law)
    assert np.ptp(curves[0]) < 1e-12

  def test_curves_follow_prior_scale(self):
    law = PointMassVar(4.0)
    prior = NormalPrior(1.0, 4.0)
    curves = threshold_curves("mle", np.array([0.1]), np.array([4.0]), law, prior=prior)
    assert curves[0, 0] == pytest.approx(1.0 + 2.0 * stats.norm.isf(0.1) * np.sqrt(2.0), abs=1e-5)

  def test_curves_frame_is_long(self, gamma_law):
    frame = curves_frame(["mle", "pm"], np.array([0.05, 0.1]), np.linspace(0.1, 2, 5), gamma_law)
    assert list(frame.columns) == ["method", "alpha", "sigma2", "threshold"]
    assert len(frame) == 2 * 2 * 5


class TestRankingVariables:
  """Per-unit ranking variables."""

  def test_mle_and_posterior_mean_for_a_shooter(self, nba_prior):
    unit = UnitRecord(id="Ryan Anderson", payload=BinomialObs(y=59, n=62))
    assert ranking_variable("mle", unit, nba_prior) == pytest.approx(0.952, abs=5e-4)
    assert ranking_variable("pm", unit, nba_prior) == pytest.approx(0.898, abs=5e-4)

  def test_orientations(self, binomial_population, nba_prior):
    dataset, _ = binomial_population
    assert ranking_variables(dataset, nba_prior, "per")[1] is Orientation.SMALLER_IS_BETTER
    assert ranking_variables(dataset, nba_prior, "pm")[1] is Orientation.LARGER_IS_BETTER

  def test_binomial_pvalue_against_pooled_rate(self):
    y = np.array([8, 2])
    n = np.array([10, 10])
    values = binomial_pvalues(y, n)
    np.testing.assert_allclose(values, stats.binom.sf(y - 1, n, 0.5))

  def test_normal_pvalue_and_pv_agree(self, normal_population, standard_prior):
    dataset, _ = normal_population
    pv, _ = ranking_variables(dataset, standard_prior, "pv", pvalue_c=0.5)
    pvalue, _ = ranking_variables(dataset, standard_prior, "pvalue", pvalue_c=0.5)
    np.testing.assert_allclose(pvalue, stats.norm.sf(pv))

  def test_bayes_factor_is_minus_infinity_below_zero(self, standard_prior):
    values = normal_log_bayes_factor(np.array([-1.0, 2.0]), np.array([1.0, 1.0]), standard_prior)
    assert values[0] == -np.inf
    assert values[1] == pytest.approx(stats.norm.logpdf(2.0, 0, np.sqrt(2.0)) - stats.norm.logpdf(2.0, 0, 1.0))

  def test_bayes_factor_needs_normal_data(self, binomial_population, nba_prior):
    dataset, _ = binomial_population
    with pytest.raises(BFUndefinedError):
      ranking_variables(dataset, nba_prior, "bf")

  def test_pvalue_undefined_for_draws(self, standard_prior):
    draws = np.linspace(-1, 1, 200)
    dataset = validate_dataset([{"id": "a", "payload": {"kind": "draws", "draws": list(draws)}}])
    with pytest.raises(ModelMismatchError):
      ranking_variables(dataset, standard_prior, "pvalue")

  def test_unknown_method(self, normal_population, standard_prior):
    dataset, _ = normal_population
    with pytest.raises(ValueError):
      ranking_variables(dataset, standard_prior, "median")

  def test_equal_variances_make_methods_agree(self, standard_prior):
    x = np.array([0.3, -1.2, 2.2, 0.9])
    dataset = dataset_from_columns(PayloadKind.NORMAL, list("abcd"), x=x, sigma2=np.full(4, 0.7))
    mle, _ = ranking_variables(dataset, standard_prior, "mle")
    pm, _ = ranking_variables(dataset, standard_prior, "pm")
    per, _ = ranking_variables(dataset, standard_prior, "per")
    assert list(np.argsort(-mle)) == list(np.argsort(-pm)) == list(np.argsort(per))
