"""Tests for unit payloads and dataset validation."""

import numpy as np
import pytest

from rankval.core.exceptions import EmptyDatasetError, InvalidUnitError, MixedPayloadKindsError
from rankval.models.units import (
  BinomialObs,
  NormalObs,
  PayloadKind,
  PosteriorDraws,
  UnitRecord,
  dataset_from_columns,
  validate_dataset,
)


class TestPayloads:
  """Payload invariants."""

  def test_binomial_rejects_more_successes_than_trials(self):
    with pytest.raises(ValueError):
      BinomialObs(y=5, n=4)

  def test_normal_rejects_non_positive_variance(self):
    with pytest.raises(ValueError):
      NormalObs(x=1.0, sigma2=0.0)

  def test_draws_reject_non_finite_values(self):
    with pytest.raises(ValueError):
      PosteriorDraws(draws=(0.1, float("nan")))

  def test_unit_id_is_stripped(self):
    unit = UnitRecord(id="  a  ", payload=NormalObs(x=0.0, sigma2=1.0))
    assert unit.id == "a"


class TestValidateDataset:
  """Dataset assembly from records."""

  def test_empty_input_raises(self):
    with pytest.raises(EmptyDatasetError) as exc:
      validate_dataset([])
    assert exc.value.error_code == "EmptyDataset"
    assert exc.value.exit_code == 3

  def test_single_binomial_unit(self):
    dataset = validate_dataset([{"id": "a", "payload": {"kind": "binomial", "y": 3, "n": 10}}])
    assert dataset.kind is PayloadKind.BINOMIAL
    assert len(dataset) == 1
    assert dataset.marginal_rate == pytest.approx(0.3)

  def test_mixed_kinds_raise(self):
    records = [
      {"id": "a", "payload": {"kind": "binomial", "y": 3, "n": 10}},
      {"id": "b", "payload": {"kind": "normal", "x": 0.5, "sigma2": 1.0}},
    ]
    with pytest.raises(MixedPayloadKindsError):
      validate_dataset(records)

  def test_all_violations_are_reported(self):
    records = [
      {"id": "good", "payload": {"kind": "binomial", "y": 1, "n": 2}},
      {"id": "too-many", "payload": {"kind": "binomial", "y": 7, "n": 5}},
      {"id": "negative", "payload": {"kind": "binomial", "y": -1, "n": 5}},
      {"id": "good", "payload": {"kind": "binomial", "y": 2, "n": 2}},
    ]
    with pytest.raises(InvalidUnitError) as exc:
      validate_dataset(records)
    flagged = {v["id"] for v in exc.value.details["violations"]}
    assert flagged == {"too-many", "negative", "good"}

  def test_draws_are_sorted_and_read_only(self):
    dataset = validate_dataset([UnitRecord(id="a", payload=PosteriorDraws(draws=(0.3, 0.1, 0.2)))])
    np.testing.assert_array_equal(dataset.draws[0], [0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
      dataset.draws[0][0] = 5.0

  def test_validated_dataset_passes_through(self):
    dataset = validate_dataset([{"id": "a", "payload": {"kind": "normal", "x": 0.0, "sigma2": 1.0}}])
    assert validate_dataset(dataset) is dataset


class TestDataset:
  """Column datasets."""

  def test_from_columns_flags_bad_rows(self):
    with pytest.raises(InvalidUnitError) as exc:
      dataset_from_columns("normal", ["a", "b", "c"], x=[0.0, np.inf, 1.0], sigma2=[1.0, 1.0, -2.0])
    assert {v["id"] for v in exc.value.details["violations"]} == {"b", "c"}

  def test_from_columns_flags_duplicates(self):
    with pytest.raises(InvalidUnitError):
      dataset_from_columns("binomial", ["a", "a"], y=[1, 2], n=[3, 3])

  def test_unit_round_trip_and_reorder(self):
    dataset = dataset_from_columns("binomial", ["a", "b"], y=[1, 2], n=[3, 4])
    assert dataset.unit(1).payload == BinomialObs(y=2, n=4)
    flipped = dataset.reorder(["b", "a"])
    assert flipped.ids == ("b", "a")
    np.testing.assert_array_equal(flipped.y, [2, 1])

  def test_data_hash_depends_on_values(self):
    first = dataset_from_columns("normal", ["a"], x=[0.5], sigma2=[1.0])
    same = dataset_from_columns("normal", ["a"], x=[0.5], sigma2=[1.0])
    other = dataset_from_columns("normal", ["a"], x=[0.5000001], sigma2=[1.0])
    assert first.data_hash() == same.data_hash()
    assert first.data_hash() != other.data_hash()
