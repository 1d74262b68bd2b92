import json

import numpy as np
import pandas as pd
import pytest

from helpers.field_classes import FieldValidationError, ScalarField, SymTensorField2, VectorFieldV
from helpers.field_io import (content_hash, encode_json, read_field, sinogram_frame, write_csv, write_dtn,
                              write_field, write_manifest)
from helpers.ray_transform import Sinogram, make_fan_bundle
from helpers.wave_dtn import DtnMatrix


def test_tensor_field_round_trip(tmp_path, small_grid, rng):
    t = SymTensorField2(small_grid, rng.standard_normal(small_grid.shape + (2, 2)))
    bin_path = write_field(tmp_path / "fields" / "t", t)
    assert bin_path.suffix == ".bin"
    header = json.loads(bin_path.with_suffix(".json").read_text())
    assert header["components"] == "sym2"
    assert header["shape"] == [32, 32]

    back = read_field(tmp_path / "fields" / "t")
    assert isinstance(back, SymTensorField2)
    assert back.grid == small_grid
    np.testing.assert_array_equal(back.s, t.s)


def test_metric_and_vector_fields_keep_their_kind(tmp_path, conformal, small_grid):
    write_field(tmp_path / "g", conformal)
    np.testing.assert_array_equal(read_field(tmp_path / "g").g, conformal.g)
    v = VectorFieldV(small_grid, np.ones(small_grid.shape + (2,)))
    write_field(tmp_path / "v", v)
    assert isinstance(read_field(tmp_path / "v"), VectorFieldV)


def test_truncated_field_is_rejected(tmp_path, small_grid):
    path = write_field(tmp_path / "u", ScalarField(small_grid, np.zeros(small_grid.shape)))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(FieldValidationError, match="values"):
        read_field(tmp_path / "u")


def test_csv_keeps_full_precision(tmp_path):
    rows = [{"a": 0.1 + 0.2, "b": 1.0 / 3.0}, {"a": np.pi, "b": 1e-300}]
    path = write_csv(tmp_path / "out" / "values.csv", rows, ["b", "a"])
    frame = pd.read_csv(path, float_precision="round_trip")
    assert list(frame.columns) == ["b", "a"]
    assert frame["a"].tolist() == [0.1 + 0.2, np.pi]
    assert frame["b"].tolist() == [1.0 / 3.0, 1e-300]


def test_sinogram_frame_columns(small_grid):
    bundle = make_fan_bundle(small_grid, 4, 4)
    frame = sinogram_frame(Sinogram(bundle, np.arange(bundle.n_rays, dtype=float)))
    assert list(frame.columns) == ["y1", "y2", "theta1", "theta2", "mu", "value"]
    assert len(frame) == bundle.n_rays


def test_dtn_dump(tmp_path, small_grid):
    gm = small_grid.gamma_minus()[:3]
    dtn = DtnMatrix(small_grid, 0.05, gm, np.ones((2, 5, 3)), ["a", "b"])
    path = write_dtn(tmp_path / "dtn", dtn)
    header = json.loads(path.with_suffix(".json").read_text())
    assert header["shape"] == [2, 5, 3]
    assert header["T"] == pytest.approx(0.2)
    assert header["basis"] == ["a", "b"]
    assert np.fromfile(path, dtype="<f8").size == 30


def test_content_hash_is_canonical():
    a = {"x": np.float64(1.5), "y": [1, 2], "z": np.arange(3)}
    b = {"z": [0, 1, 2], "y": [1, 2], "x": 1.5}
    assert encode_json(a) == encode_json(b)
    assert content_hash(a) == content_hash(b)
    assert content_hash(a) != content_hash({**b, "x": 1.25})
    with pytest.raises(TypeError):
        encode_json({"bad": object()})


def test_manifest_is_written(tmp_path):
    path = write_manifest(tmp_path / "run", {"status": "ok", "value": np.float64(2.0)})
    assert path.name == "manifest.json"
    assert json.loads(path.read_text()) == {"status": "ok", "value": 2.0}
