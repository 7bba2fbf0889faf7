"""Tests for posterior tail probabilities."""

import numpy as np
import pytest
from scipy import integrate, stats

from rankval.core.exceptions import ModelMismatchError, ThetaOutOfRangeError
from rankval.models.priors import BetaPrior, NormalPrior
from rankval.models.units import BinomialObs, NormalObs, PayloadKind, PosteriorDraws, UnitRecord, dataset_from_columns
from rankval.services.tail_prob import (
  TailModel,
  TailProbFn,
  per_integral,
  posterior_mean,
  tail_beta_binomial,
  tail_from_draws,
  tail_normal,
)


class TestKernels:
  """Scalar kernels."""

  def test_normal_tail_known_value(self, standard_prior):
    assert tail_normal(1.0, 1.0, standard_prior, 0.0) == pytest.approx(0.760250, abs=1e-6)

  def test_normal_tail_broadcasts(self, standard_prior):
    x = np.array([[0.0], [2.0]])
    values = tail_normal(x, np.ones_like(x), standard_prior, np.array([[-1.0, 0.0, 1.0]]))
    assert values.shape == (2, 3)
    assert np.all(np.diff(values, axis=1) < 0)

  def test_beta_tail_matches_posterior_survival(self, nba_prior):
    theta = np.array([0.6, 0.75, 0.9])
    expected = stats.beta.sf(theta, nba_prior.a + 59, nba_prior.b + 3)
    np.testing.assert_allclose(tail_beta_binomial(59, 62, nba_prior, theta), expected, rtol=1e-10)

  def test_beta_tail_outside_support(self, nba_prior):
    values = tail_beta_binomial(5, 10, nba_prior, np.array([0.0, 1.0]))
    np.testing.assert_array_equal(values, [1.0, 0.0])

  def test_beta_tail_strict_raises(self, nba_prior):
    with pytest.raises(ThetaOutOfRangeError):
      tail_beta_binomial(5, 10, nba_prior, 1.5, strict=True)

  def test_draws_count_ties_as_exceeding(self):
    draws = np.array([1.0, 2.0, 3.0, 4.0])
    assert tail_from_draws(draws, 2.5) == 0.5
    assert tail_from_draws(draws, 2.0) == 0.75
    assert tail_from_draws(draws, 5.0) == 0.0


class TestTailProbFn:
  """Unit tail functions."""

  def test_tail_is_non_decreasing_in_alpha(self, nba_prior):
    fn = TailProbFn(UnitRecord(id="a", payload=BinomialObs(y=105, n=116)), nba_prior)
    values = fn(np.linspace(0.01, 0.99, 50))
    assert np.all(np.diff(values) >= -1e-12)

  def test_incompatible_prior_raises(self, standard_prior):
    with pytest.raises(ModelMismatchError):
      TailProbFn(UnitRecord(id="a", payload=BinomialObs(y=1, n=2)), standard_prior)

  def test_draws_accept_any_theta_law(self, standard_prior):
    draws = tuple(np.linspace(-2, 2, 200))
    fn = TailProbFn(UnitRecord(id="a", payload=PosteriorDraws(draws=draws)), standard_prior)
    assert fn(0.5) == pytest.approx(0.5, abs=0.01)

  def test_posterior_mean_beta(self, nba_prior):
    unit = UnitRecord(id="a", payload=BinomialObs(y=125, n=133))
    assert posterior_mean(unit, nba_prior) == pytest.approx((125 + 15.12) / (133 + 20.5))

  def test_posterior_mean_normal_shrinks(self, standard_prior):
    unit = UnitRecord(id="a", payload=NormalObs(x=2.0, sigma2=1.0))
    assert posterior_mean(unit, standard_prior) == pytest.approx(1.0)

  def test_per_integral_beta(self, nba_prior):
    fn = TailProbFn(UnitRecord(id="a", payload=BinomialObs(y=59, n=62)), nba_prior)
    post = stats.beta(nba_prior.a + 59, nba_prior.b + 3)
    expected, _ = integrate.quad(lambda t: post.pdf(t) * stats.beta.sf(t, nba_prior.a, nba_prior.b), 0, 1)
    assert per_integral(fn) == pytest.approx(1.0 - expected, abs=2e-3)

  def test_per_integral_needs_enough_nodes(self, standard_prior):
    fn = TailProbFn(UnitRecord(id="a", payload=NormalObs(x=0.0, sigma2=1.0)), standard_prior)
    with pytest.raises(ValueError):
      per_integral(fn, n_nodes=50)


class TestTailModel:
  """Dataset-level evaluation."""

  def test_matrix_matches_unit_functions(self, binomial_population):
    dataset, _ = binomial_population
    prior = BetaPrior(15.0, 5.0)
    model = TailModel(dataset, prior)
    alphas = np.array([0.05, 0.3, 0.8])
    matrix = model.matrix(alphas)
    assert matrix.shape == (len(dataset), 3)
    for i in (0, 17, 299):
      np.testing.assert_allclose(matrix[i], model.unit_fn(i)(alphas), rtol=1e-12)

  def test_pointwise_matches_matrix(self, normal_population, standard_prior):
    dataset, _ = normal_population
    model = TailModel(dataset, standard_prior)
    alphas = np.array([0.1, 0.5])
    matrix = model.matrix(alphas)
    rows = np.array([3, 3, 40])
    expected = [matrix[3, 0], matrix[3, 1], matrix[40, 1]]
    np.testing.assert_allclose(model.pointwise(rows, np.array([0.1, 0.5, 0.5])), expected)

  def test_normal_per_matches_integral(self, normal_population, standard_prior):
    dataset, _ = normal_population
    model = TailModel(dataset, standard_prior)
    exact = model.per()
    for i in (0, 1, 2):
      assert exact[i] == pytest.approx(per_integral(model.unit_fn(i)), abs=2e-3)

  def test_binomial_per_is_smaller_for_better_units(self, nba_prior):
    dataset = dataset_from_columns(PayloadKind.BINOMIAL, ["weak", "strong"], y=[50, 95], n=[100, 100])
    per = TailModel(dataset, nba_prior).per()
    assert per[1] < per[0]

  def test_mle_and_posterior_mean(self, nba_prior):
    dataset = dataset_from_columns(PayloadKind.BINOMIAL, ["a"], y=[59], n=[62])
    model = TailModel(dataset, nba_prior)
    assert model.mle()[0] == pytest.approx(0.952, abs=5e-4)
    assert model.posterior_mean()[0] == pytest.approx(0.898, abs=5e-4)

  def test_prior_mismatch(self, binomial_population):
    dataset, _ = binomial_population
    with pytest.raises(ModelMismatchError):
      TailModel(dataset, NormalPrior(0.0, 1.0))
