import json
import os

import numpy as np
import pytest

from app.utils.grid import build_grid, sample_graph
from app.utils.storage import FieldFormatError, dump_field, load_field, read_json, resolve_dir, write_json


def test_field_dump_layout(out_dir):
    gf = sample_graph("x1 * t", build_grid(2, 8, 4, 0.0, 1.0))
    base = os.path.join(out_dir, "flow")
    bin_path, json_path = dump_field(base, gf.f, {"kind": "graph", "spacing": 0.25})
    assert os.path.getsize(bin_path) == 5 * 9 * 8
    with open(json_path, encoding="utf-8") as f:
        header = json.load(f)
    assert header["dims"] == [5, 9]
    values, meta = load_field(base)
    assert np.array_equal(values, gf.f)
    assert meta["kind"] == "graph"
    # little-endian float64, time-major
    raw = np.fromfile(bin_path, dtype="<f8")
    assert raw[9 * 2 + 3] == gf.f[2, 3]


def test_truncated_field_is_rejected(out_dir):
    base = os.path.join(out_dir, "phase")
    bin_path, _ = dump_field(base, np.ones((4, 4)), {})
    with open(bin_path, "r+b") as f:
        f.truncate(40)
    with pytest.raises(FieldFormatError, match="bytes"):
        load_field(base)


def test_missing_header(out_dir):
    with pytest.raises(FieldFormatError):
        load_field(os.path.join(out_dir, "nothing"))


def test_json_rejects_nan(out_dir):
    with pytest.raises(ValueError):
        write_json(os.path.join(out_dir, "bad.json"), {"x": float("nan")})
    path = os.path.join(out_dir, "ok.json")
    write_json(path, {"b": 1, "a": [1.5]})
    assert read_json(path) == {"a": [1.5], "b": 1}
    assert read_json(os.path.join(out_dir, "missing.json")) is None


def test_resolve_dir_keeps_absolute(out_dir):
    assert resolve_dir(out_dir) == out_dir
    assert os.path.isabs(resolve_dir("relative"))
