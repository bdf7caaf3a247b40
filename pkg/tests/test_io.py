import math
import os

import numpy as np
import pytest

from ddvar import io as dio
from ddvar.errors import DimensionError


def test_json_is_deterministic_and_plain(tmp_path):
    doc = {"b": np.float64(0.1), "a": [np.int64(2), np.bool_(True)], "c": np.arange(2)}
    text = dio.json_text(doc)
    assert text == dio.json_text(dict(reversed(list(doc.items()))))
    assert text.index('"a"') < text.index('"b"')
    assert text.endswith("\n")


def test_csv_round_trip_precision(tmp_path):
    x = 1.0 / 3.0
    path = tmp_path / "t.csv"
    dio.write_csv(path, [{"x": x, "flag": True, "n": 3}], ("n", "x", "flag"))
    row = dio.read_csv(path)[0]
    assert float(row["x"]) == x and row["flag"] == "true" and row["n"] == "3"


def test_snapshot_round_trip_is_bit_exact(tmp_path, grid8, params, rng):
    states = rng.standard_normal((2,) + grid8.state_shape)
    path = tmp_path / "s.bin"
    dio.write_snapshot(path, states, grid8, params)
    back, header = dio.read_snapshot(path)
    np.testing.assert_array_equal(back, states)
    assert header["grid"]["nlon"] == 8 and header["params"]["p_tz"] == 2
    with pytest.raises(DimensionError):
        dio.write_snapshot(path, np.zeros((2, 2)), grid8)


def test_atomic_write_leaves_no_partial_file(tmp_path):
    path = tmp_path / "out.json"
    dio.write_json(path, {"ok": 1})

    class Boom:
        pass

    with pytest.raises(TypeError):
        dio.write_json(path, {"bad": Boom()})
    assert open(path).read() == dio.json_text({"ok": 1})
    assert [f for f in os.listdir(tmp_path)] == ["out.json"]


def test_file_digest(tmp_path):
    path = tmp_path / "a.txt"
    dio.atomic_write_text(path, "abc")
    assert dio.file_digest(path).startswith("ba7816bf")


def test_nan_json():
    assert "NaN" in dio.json_text({"x": math.nan})
