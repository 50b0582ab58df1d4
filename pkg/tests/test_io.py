import json

import numpy as np
import pytest

from srmcf.grid import Grid, unit_box
from srmcf.group import make_model
from srmcf.io import format_float, read_csv, read_snapshot, write_csv, write_json, write_snapshot


def test_format_float():
    assert format_float(0.1) == "0.10000000000000001"
    assert format_float(3) == "3"
    assert format_float(1e-300) == "1e-300"
    assert format_float(2 / 3) == "0.66666666666666663"
    assert format_float(float("nan")) == "nan"
    assert float(format_float(np.pi)) == np.pi


def test_snapshot_roundtrip(tmp_path):
    g = make_model("rototranslation")
    grid = Grid.for_group(g, 0.0, 1.0, (5, 6, 8))
    values = np.random.default_rng(0).normal(size=grid.shape)
    path = write_snapshot(tmp_path / "u.snap", values, grid, "rototranslation", 0.25, 0.1)
    snap = read_snapshot(path)
    assert snap.group == "rototranslation" and snap.epsilon == 0.25 and snap.time == 0.1
    assert snap.grid == grid
    np.testing.assert_array_equal(snap.values, values)
    raw = path.read_bytes()
    head, body = raw.split(b"end_header\n", 1)
    assert head.startswith(b"format=1\ngroup=rototranslation\nn=3\nshape=5,6,8\n")
    assert np.frombuffer(body, dtype="<f8")[1] == values.ravel()[1]


def test_snapshot_rejects_corruption(tmp_path):
    g = make_model("abelian", 2)
    grid = unit_box(g, 5)
    path = write_snapshot(tmp_path / "u.snap", np.zeros(grid.shape), grid, "abelian:2", 1.0, 0.0)
    raw = path.read_bytes()
    (tmp_path / "short.snap").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        read_snapshot(tmp_path / "short.snap")
    (tmp_path / "fmt.snap").write_bytes(raw.replace(b"format=1", b"format=9"))
    with pytest.raises(ValueError):
        read_snapshot(tmp_path / "fmt.snap")
    with pytest.raises(ValueError):
        write_snapshot(tmp_path / "bad.snap", np.zeros(3), grid, "abelian:2", 1.0, 0.0)


def test_csv_roundtrip(tmp_path):
    path = write_csv(tmp_path / "t.csv", ("eps", "quantity", "value"), [(0.1, "gap", 1 / 3), (1, "x", 2.0)])
    text = path.read_text()
    assert text.splitlines()[0] == "eps,quantity,value"
    assert text.splitlines()[1] == "0.10000000000000001,gap,0.33333333333333331"
    header, rows = read_csv(path)
    assert header == ["eps", "quantity", "value"] and len(rows) == 2


def test_json(tmp_path):
    path = write_json(tmp_path / "s.json", {"b": np.float64(1.5), "a": np.arange(2), "c": True})
    data = json.loads(path.read_text())
    assert data == {"a": [0, 1], "b": 1.5, "c": True}
    assert list(data) == ["a", "b", "c"]


def test_atomic_write_leaves_no_temp(tmp_path):
    write_csv(tmp_path / "t.csv", ("a",), [(1,)])
    assert sorted(p.name for p in tmp_path.iterdir()) == ["t.csv"]
