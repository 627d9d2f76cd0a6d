import json
import math

import mpmath
import numpy as np

from gramstab.reporting import config_hash, format_number, write_json, write_table


def test_format_number():
    assert format_number(0.1) == "0.10000000000000001"
    assert float(format_number(1 / 3)) == 1 / 3
    assert format_number(np.float64(2.0)) == "2"
    assert format_number(3) == "3" and format_number(np.int64(4)) == "4"
    assert format_number(True) == "true"
    assert format_number(math.nan) == "nan" and format_number(-math.inf) == "-inf"
    assert format_number(mpmath.mpf("1e-700")).startswith("1.0")


def test_config_hash_is_order_independent():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_csv_layout(tmp_path):
    path = write_table(str(tmp_path / "t"), ["x", "y"], [[0.5, 1], [0.25, 2]], {"k": 1})
    lines = open(path).read().splitlines()
    assert lines[0].startswith("# tool=gramstab version=")
    assert lines[1] == f"# config_sha256={config_hash({'k': 1})}"
    assert lines[2:] == ["x,y", "0.5,1", "0.25,2"]


def test_json_round_trip(tmp_path):
    write_json(tmp_path / "a.json", {"v": 0.1, "bad": math.inf, "arr": np.arange(3)}, {"k": 1})
    doc = json.loads((tmp_path / "a.json").read_text())
    assert doc["v"] == 0.1 and doc["bad"] == "inf" and doc["arr"] == [0, 1, 2]
    assert doc["provenance"]["config_sha256"] == config_hash({"k": 1})
    path = write_table(str(tmp_path / "t"), ["x"], [[1.5]], {}, fmt="json")
    assert json.loads(open(path).read())["rows"] == [[1.5]]
