import json
import math

import numpy as np

from qestim.io import dumps_json, fmt_float, to_jsonable, write_csv, write_json


def test_floats_roundtrip_exactly(rng):
    for x in rng.standard_normal(200) * 10.0 ** rng.integers(-300, 300, 200):
        assert float(fmt_float(x)) == x
    assert float(fmt_float(1.0 / 3.0)) == 1.0 / 3.0
    assert fmt_float(0.1) == "0.10000000000000001"


def test_nonfinite_tokens():
    assert fmt_float(float("nan")) == "NaN"
    assert fmt_float(float("inf")) == "Infinity"
    assert fmt_float(float("-inf")) == "-Infinity"
    # python's json parser accepts these tokens back
    parsed = json.loads(dumps_json({"a": float("inf"), "b": float("nan")}))
    assert parsed["a"] == float("inf")
    assert math.isnan(parsed["b"])


def test_complex_becomes_re_im_pairs():
    out = to_jsonable(np.array([[1 + 2j, 0.5j]]))
    assert out == [[[1.0, 2.0], [0.0, 0.5]]]
    assert to_jsonable(3 - 4j) == [3.0, -4.0]


def test_numpy_scalars_normalized():
    out = to_jsonable({"i": np.int64(3), "f": np.float64(0.5), "b": np.bool_(True),
                       1: "key-coerced"})
    assert out == {"i": 3, "f": 0.5, "b": True, "1": "key-coerced"}


def test_dumps_json_is_parseable_and_deterministic(rng):
    payload = {
        "matrix": rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)),
        "vector": rng.standard_normal(3),
        "nested": {"empty_list": [], "empty_map": {}, "flag": False, "none": None},
    }
    text = dumps_json(payload)
    assert text == dumps_json(payload)
    parsed = json.loads(text)
    m = np.array(parsed["matrix"])
    assert np.array_equal(m[..., 0] + 1j * m[..., 1], payload["matrix"])
    assert np.array_equal(parsed["vector"], payload["vector"])
    assert parsed["nested"] == {"empty_list": [], "empty_map": {},
                                "flag": False, "none": None}


def test_write_json_file(tmp_path):
    path = tmp_path / "out.json"
    write_json(path, {"x": 2.0**-40})
    parsed = json.loads(path.read_text())
    assert parsed["x"] == 2.0**-40


def test_write_csv_formatting(tmp_path):
    path = tmp_path / "out.csv"
    write_csv(
        path,
        ("iteration", "value", "converged"),
        [(0, 0.1, False), (1, float("inf"), True)],
    )
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,value,converged"
    assert lines[1] == "0,0.10000000000000001,0"
    assert lines[2] == "1,Infinity,1"
