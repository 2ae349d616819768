import json

import numpy as np

from reflectch.io import (
    canonical_json,
    config_hash,
    read_json,
    read_paths_csv,
    report_document,
    version_string,
    write_json,
    write_manifest,
    write_paths_csv,
    write_table_csv,
)
from reflectch.mc import McEstimate
from reflectch.spectral import GridSpec


def test_canonical_json_handles_numpy_and_nonfinite():
    text = canonical_json({"b": np.float64(1.5), "a": np.arange(3), "c": float("inf"), "d": np.bool_(True), "e": McEstimate(1.0, 0.1, 10)})
    d = json.loads(text)
    assert list(d) == ["a", "b", "c", "d", "e"]
    assert d["c"] == "inf" and d["a"] == [0, 1, 2] and d["e"]["n"] == 10


def test_config_hash_is_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 16


def test_report_round_trip(tmp_path):
    doc = report_document("x", {"n": 3}, 7, {"value": np.float32(2.0)}, {"seconds": 1.0})
    assert doc["seed"] == 7 and doc["config_hash"] == config_hash({"n": 3})
    assert doc["version"] == version_string()
    p = write_json(tmp_path / "sub" / "r.json", doc)
    assert read_json(p)["payload"]["value"] == 2.0


def test_paths_csv_round_trip(tmp_path):
    grid = GridSpec(9)
    X = np.random.default_rng(0).standard_normal((3, 9))
    p = write_paths_csv(tmp_path / "p.csv", X, grid, 5, {"k": 1})
    Y, g, header = read_paths_csv(p)
    assert np.array_equal(X, Y) and g == grid
    assert header["seed"] == "5" and header["config_hash"] == config_hash({"k": 1})


def test_table_and_manifest(tmp_path):
    p = write_table_csv(tmp_path / "t.csv", [{"a": 1, "b": np.float64(0.5)}], 1, {})
    lines = p.read_text().splitlines()
    assert lines[-2:] == ["a,b", "1,0.5"]
    m = write_manifest(tmp_path, "cmd", {"z": 1}, 1, [p], {"passed": True})
    assert read_json(m)["files"] == ["t.csv"]
