"""Tests for reading inputs and writing artifacts."""

import json

import numpy as np
import pandas as pd
import pytest

from rankval.core.exceptions import (
  DataError,
  EmptyDatasetError,
  InvalidConfigError,
  InvalidUnitError,
  MissingInputError,
)
from rankval.models.priors import BetaPrior, GammaVar, NormalPrior
from rankval.models.units import PayloadKind
from rankval.schemas.documents import FittedPriorDocument, LawDocument
from rankval.services import io_service


def write(path, text):
  path.write_text(text, encoding="utf-8")
  return path


class TestReadUnits:
  """Unit tables."""

  def test_reads_bundled_leaders(self, nba_leaders_path):
    dataset = io_service.read_units(nba_leaders_path)
    assert dataset.kind is PayloadKind.BINOMIAL
    assert len(dataset) == 23
    assert dataset.ids[0] == "Brian Roberts"
    assert (int(dataset.y[1]), int(dataset.n[1])) == (59, 62)

  def test_normal_table(self, tmp_path):
    path = write(tmp_path / "units.csv", "id,x,sigma2\na,0.5,1.0\nb,-0.2,0.25\n")
    dataset = io_service.read_units(path)
    assert dataset.kind is PayloadKind.NORMAL
    np.testing.assert_allclose(dataset.sigma2, [1.0, 0.25])

  def test_draws_long_format(self, tmp_path):
    rows = "\n".join(f"{unit},{v}" for unit in ("a", "b") for v in range(3))
    dataset = io_service.read_units(write(tmp_path / "draws.csv", f"id,draw\n{rows}\n"))
    assert dataset.kind is PayloadKind.DRAWS
    assert dataset.ids == ("a", "b")
    np.testing.assert_array_equal(dataset.draws[1], [0.0, 1.0, 2.0])

  def test_draws_sidecar(self, tmp_path):
    units = write(tmp_path / "units.csv", "id\nb\na\n")
    draws = write(tmp_path / "draws.csv", "id,draw\na,1\na,2\nb,3\nb,4\n")
    dataset = io_service.read_units(units, draws_path=draws)
    assert dataset.ids == ("b", "a")

  def test_sidecar_with_unknown_ids(self, tmp_path):
    units = write(tmp_path / "units.csv", "id\na\n")
    draws = write(tmp_path / "draws.csv", "id,draw\na,1\nz,2\n")
    with pytest.raises(DataError):
      io_service.read_units(units, draws_path=draws)

  def test_draws_wide_format(self, tmp_path):
    rng = np.random.default_rng(0)
    matrix = rng.normal(size=(3, 120))
    frame = pd.DataFrame(matrix, columns=[f"d{j}" for j in range(120)])
    frame.insert(0, "id", ["a", "b", "c"])
    path = tmp_path / "wide.csv"
    frame.to_csv(path, index=False)
    dataset = io_service.read_units(path, kind="draws")
    assert dataset.ids == ("a", "b", "c")
    np.testing.assert_allclose(dataset.draws[2], matrix[2])

  def test_wide_draws_are_inferred(self, tmp_path):
    dataset = io_service.read_units(write(tmp_path / "wide.csv", "id,d1,d2,d3\na,0.1,0.2,0.3\nb,1,2,3\n"))
    assert dataset.kind is PayloadKind.DRAWS
    np.testing.assert_allclose(dataset.draws[1], [1.0, 2.0, 3.0])

  def test_wide_rows_may_be_ragged(self, tmp_path):
    dataset = io_service.read_units(write(tmp_path / "wide.csv", "id,d1,d2,d3\na,0.1,0.2,0.3\nb,1,2,\n"), kind="draws")
    assert dataset.draws[1].size == 2

  def test_wide_sidecar(self, tmp_path):
    units = write(tmp_path / "units.csv", "id\nb\na\n")
    draws = write(tmp_path / "draws.csv", "id,s1,s2\na,1,2\nb,3,4\n")
    dataset = io_service.read_units(units, draws_path=draws)
    assert dataset.ids == ("b", "a")
    np.testing.assert_array_equal(dataset.draws[0], [3.0, 4.0])

  def test_headerless_matrix_sidecar(self, tmp_path):
    units = write(tmp_path / "units.csv", "id\nb\na\n")
    draws = write(tmp_path / "matrix.csv", "0.5,0.6,0.7\n1.5,1.6,1.7\n")
    dataset = io_service.read_units(units, draws_path=draws)
    assert dataset.ids == ("b", "a")
    np.testing.assert_allclose(dataset.draws[0], [0.5, 0.6, 0.7])
    np.testing.assert_allclose(dataset.draws[1], [1.5, 1.6, 1.7])

  def test_npy_matrix_sidecar(self, tmp_path):
    units = write(tmp_path / "units.csv", "id\nx\ny\nz\n")
    matrix = np.arange(12.0).reshape(3, 4)
    np.save(tmp_path / "draws.npy", matrix)
    dataset = io_service.read_units(units, draws_path=tmp_path / "draws.npy")
    assert dataset.kind is PayloadKind.DRAWS
    np.testing.assert_array_equal(dataset.draws[2], matrix[2])

  def test_matrix_rows_must_match_units(self, tmp_path):
    units = write(tmp_path / "units.csv", "id\na\nb\nc\n")
    draws = write(tmp_path / "matrix.csv", "1,2\n3,4\n")
    with pytest.raises(DataError):
      io_service.read_units(units, draws_path=draws)

  def test_missing_file(self, tmp_path):
    with pytest.raises(MissingInputError) as exc:
      io_service.read_units(tmp_path / "absent.csv")
    assert exc.value.exit_code == 2

  @pytest.mark.parametrize("text", ["", "id,y,n\n", "# only a comment\n"])
  def test_empty_inputs(self, tmp_path, text):
    with pytest.raises(EmptyDatasetError):
      io_service.read_units(write(tmp_path / "empty.csv", text))

  def test_invalid_rows_are_all_listed(self, tmp_path):
    path = write(tmp_path / "bad.csv", "id,y,n\na,5,3\nb,2,4\nc,abc,4\n")
    with pytest.raises(InvalidUnitError) as exc:
      io_service.read_units(path)
    assert [v["id"] for v in exc.value.details["violations"]] == ["a", "c"]

  def test_unrecognized_columns(self, tmp_path):
    with pytest.raises(DataError):
      io_service.read_units(write(tmp_path / "odd.csv", "id,score\na,1\n"))

  def test_explicit_kind_needs_its_columns(self, tmp_path):
    with pytest.raises(DataError):
      io_service.read_units(write(tmp_path / "units.csv", "id,y,n\na,1,2\n"), kind="normal")


class TestPriorDocuments:
  """Fitted-prior JSON."""

  def test_round_trip(self, tmp_path):
    document = FittedPriorDocument.from_fits(NormalPrior(0.5, 2.0), GammaVar(3.0, 1.5))
    path = io_service.write_json(document, tmp_path / "prior.json")
    spec = io_service.read_prior(path)
    assert spec.theta_law == NormalPrior(0.5, 2.0)
    assert spec.variance_law == GammaVar(3.0, 1.5)

  def test_invalid_document(self, tmp_path):
    path = write(tmp_path / "prior.json", json.dumps({"theta_law": {"family": "beta"}, "extra": 1}))
    with pytest.raises(InvalidConfigError):
      io_service.read_prior(path)

  def test_missing_parameter(self, tmp_path):
    document = FittedPriorDocument(theta_law=LawDocument(family="beta", params={"a": 2.0}))
    path = io_service.write_json(document, tmp_path / "prior.json")
    with pytest.raises(InvalidConfigError):
      io_service.read_prior(path)

  def test_beta_prior_document(self):
    document = FittedPriorDocument.from_fits(BetaPrior(15.12, 5.38))
    assert document.to_prior_spec().theta_law == BetaPrior(15.12, 5.38)
    assert document.variance_law is None


class TestSimConfig:
  """Bench study configs."""

  def test_relative_paths_resolve_against_config(self, tmp_path):
    path = write(
      tmp_path / "study.json",
      json.dumps({"study": "validation", "seed": 1, "train_path": "mid.csv", "full_path": "full.csv"}),
    )
    config = io_service.read_sim_config(path)
    assert config.train_path == tmp_path / "mid.csv"
    assert config.full_path == tmp_path / "full.csv"

  def test_seed_is_required(self, tmp_path):
    path = write(tmp_path / "study.json", json.dumps({"study": "agreement"}))
    with pytest.raises(InvalidConfigError):
      io_service.read_sim_config(path)


class TestWriting:
  """Output tables."""

  def test_config_hash_header(self, tmp_path):
    frame = pd.DataFrame({"id": ["a"], "value": [0.123456789]})
    path = io_service.write_table(frame, tmp_path / "out.csv", "abc123")
    assert io_service.read_config_hash(path) == "abc123"
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[1:] == ["id,value", "a,0.123457"]

  def test_read_config_hash_without_header(self, tmp_path):
    assert io_service.read_config_hash(write(tmp_path / "plain.csv", "id\na\n")) is None

  def test_v_matrix_frame(self):
    frame = io_service.v_matrix_frame(["a", "b"], np.array([0.1, 0.5]), np.array([[0.2, 0.6], [0.3, 0.7]]))
    assert list(frame["id"]) == ["a", "a", "b", "b"]
    assert list(frame["tailprob"]) == [0.2, 0.6, 0.3, 0.7]
