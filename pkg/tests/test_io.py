"""
Tests for the artifact writers.
"""
import csv
import math

import numpy as np

from sbm_lab.utils.io import config_hash, read_csv, write_csv, write_jsonl


def test_numeric_table_reads_back(tmp_path):
    rows = [(0.1, 1, math.inf), (1 / 3, 2, -2.5e-17)]
    path = write_csv(tmp_path / "t.csv", ["t", "n", "value"], rows, {"seed": 7, "level": "infinity"})
    meta, columns, data = read_csv(path)
    assert meta == {"seed": "7", "level": "infinity"}
    assert columns == ["t", "n", "value"]
    assert data.shape == (2, 3)
    assert data[1, 0] == 1 / 3 and data[0, 2] == math.inf and data[1, 2] == -2.5e-17


def test_cells_with_commas_are_quoted(tmp_path):
    path = write_csv(tmp_path / "labels.csv", ["drift", "mass"], [("h[1,0.5]", 2.0), ('say "x"', 1.0)])
    text = path.read_text(encoding="utf-8")
    assert text.splitlines()[1] == '"h[1,0.5]",2.0'
    with path.open(newline="", encoding="utf-8") as f:
        assert list(csv.reader(f)) == [["drift", "mass"], ["h[1,0.5]", "2.0"], ['say "x"', "1.0"]]


def test_header_only_table(tmp_path):
    path = write_csv(tmp_path / "empty.csv", ["a", "b"], [])
    _, columns, data = read_csv(path)
    assert columns == ["a", "b"] and data.shape == (0, 2)


def test_writes_are_byte_identical(tmp_path):
    rows = [(float(x), np.float64(x) ** 2, np.int64(3), True) for x in np.linspace(0, 1, 7)]
    first = write_csv(tmp_path / "a.csv", ["x", "y", "k", "flag"], rows, {"hash": "abc"}).read_bytes()
    second = write_csv(tmp_path / "b.csv", ["x", "y", "k", "flag"], rows, {"hash": "abc"}).read_bytes()
    assert first == second
    assert first.endswith(b"\n") and b"\r" not in first


def test_jsonl_header_and_nonfinite_values(tmp_path):
    path = write_jsonl(tmp_path / "r.jsonl", [{"b": math.nan, "a": np.int64(1)}], header={"level": 10})
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines == ['{"header": {"level": 10}}', '{"a": 1, "b": "nan"}']


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": [1.0, 2]}) == config_hash({"b": [1.0, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
