import json
import os

import numpy as np
import pandas as pd
import pytest

from hartree_lab.energy import EnergyBreakdown, ProblemSpec
from hartree_lab.errors import StateFileError
from hartree_lab.io import (
    Manifest,
    load_field,
    load_sidecar,
    load_state,
    save_field,
    save_result,
    sidecar_path,
    write_csv,
    write_gnuplot_script,
    write_json,
)
from hartree_lab.solver import GroundStateResult
from hartree_lab.spectral_grid import gaussian_field


@pytest.fixture
def field(small_grid):
    return gaussian_field(small_grid, width=1.3, label="sample")


def test_snapshot_layout(tmp_path, field):
    path = save_field(field, str(tmp_path / "state.fld"))
    with open(path, "rb") as f:
        raw = f.read()
    header, payload = raw.split(b"\n", 1)
    assert json.loads(header) == {"L": 8.0, "label": "sample", "n": 32}
    assert list(json.loads(header)) == ["L", "label", "n"]
    assert len(payload) == 8 * 32 ** 3
    assert np.array_equal(np.frombuffer(payload, dtype="<f8").reshape(field.grid.shape), field.values)


def test_snapshot_reload_is_bit_exact(tmp_path, field):
    loaded = load_field(save_field(field, str(tmp_path / "sub" / "state.fld")))
    assert loaded.grid == field.grid
    assert loaded.label == "sample"
    assert np.array_equal(loaded.values, field.values)


def test_missing_snapshot(tmp_path):
    with pytest.raises(StateFileError) as info:
        load_field(str(tmp_path / "absent.fld"))
    assert info.value.path.endswith("absent.fld")


def test_truncated_snapshot(tmp_path, field):
    path = save_field(field, str(tmp_path / "state.fld"))
    with open(path, "rb") as f:
        raw = f.read()
    with open(path, "wb") as f:
        f.write(raw[:-8])
    with pytest.raises(StateFileError):
        load_field(path)


@pytest.mark.parametrize("header", [b"not json", b'{"L": 8.0}', b'{"L": 8.0, "n": 12, "label": ""}', b""])
def test_corrupt_header(tmp_path, header):
    path = tmp_path / "bad.fld"
    path.write_bytes(header + (b"\n" if header else b"") + b"\x00" * 16)
    with pytest.raises(StateFileError):
        load_field(str(path))


def test_nonfinite_payload(tmp_path, field):
    path = save_field(field, str(tmp_path / "state.fld"))
    with open(path, "rb") as f:
        header, payload = f.read().split(b"\n", 1)
    values = np.frombuffer(payload, dtype="<f8").copy()
    values[5] = np.nan
    with open(path, "wb") as f:
        f.write(header + b"\n" + values.tobytes())
    with pytest.raises(StateFileError):
        load_field(path)


def test_sidecar_round_trip(tmp_path, field):
    result = GroundStateResult(field, EnergyBreakdown.from_terms(0.3, 0.5), -0.2, 1e-9, 42, True,
                               spec=ProblemSpec.rescaled(1.0, 16.0))
    field_path, json_path = save_result(result, str(tmp_path), "rescaled_ground_state")
    assert json_path == sidecar_path(field_path) == str(tmp_path / "rescaled_ground_state.json")
    state, sidecar = load_state(field_path)
    assert np.array_equal(state.values, field.values)
    assert sidecar == {"family": "rescaled", "m": 1.0, "c": 16.0, "N": 1.0, "energy": pytest.approx(-0.2),
                       "multiplier": -0.2, "residual": 1e-9, "iterations": 42, "converged": True}


def test_sidecar_errors(tmp_path):
    with pytest.raises(StateFileError):
        load_sidecar(str(tmp_path / "absent.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(StateFileError):
        load_sidecar(str(broken))
    unrelated = write_json({"hello": 1}, str(tmp_path / "unrelated.json"))
    with pytest.raises(StateFileError):
        load_sidecar(unrelated)


def test_write_json_is_sorted_and_indented(tmp_path):
    path = write_json({"b": 1, "a": [1, 2]}, str(tmp_path / "x.json"))
    text = open(path).read()
    assert text.index('"a"') < text.index('"b"')
    assert text.endswith("\n")
    assert json.loads(text) == {"a": [1, 2], "b": 1}


def test_write_csv_float_format(tmp_path):
    path = write_csv(pd.DataFrame({"c": [8.0], "value": [1.0 / 3.0]}), str(tmp_path / "t.csv"))
    lines = open(path).read().splitlines()
    assert lines[0] == "c,value"
    assert lines[1] == "8.000000000000e+00,3.333333333333e-01"


def test_gnuplot_script_reads_the_csv(tmp_path):
    csv_path = str(tmp_path / "profile.csv")
    script = write_gnuplot_script(str(tmp_path / "profile.gp"), csv_path, (1, 2), "r", "Q(r)", "profile",
                                  logscale_y=True)
    text = open(script).read()
    assert "set datafile separator ','" in text
    assert "set logscale y" in text
    assert "plot 'profile.csv' every ::1 using 1:2" in text
    assert sum(line.startswith("plot") for line in text.splitlines()) == 1
    assert "index" not in text


def test_gnuplot_script_plots_a_single_series(tmp_path):
    with pytest.raises(TypeError):
        write_gnuplot_script(str(tmp_path / "c.gp"), "c.csv", (1, 2), "c", "gap", "scan", series_column=3)


def test_manifest_merges_runs(tmp_path):
    out = str(tmp_path)
    first = Manifest(out, "hash-a")
    first.add(os.path.join(out, "b.csv"), "table")
    first.write()
    second = Manifest(out, "hash-b")
    second.add(os.path.join(out, "a.json"), "summary")
    second.add(os.path.join(out, "b.csv"), "table")
    path = second.write()
    artifacts = json.load(open(path))["artifacts"]
    assert [a["path"] for a in artifacts] == ["a.json", "b.csv"]
    assert all(a["config_hash"] == "hash-b" for a in artifacts)


def test_manifest_replaces_unreadable_file(tmp_path):
    (tmp_path / "manifest.json").write_text("[1, 2")
    manifest = Manifest(str(tmp_path), "h")
    manifest.add(str(tmp_path / "x.csv"), "table")
    artifacts = json.load(open(manifest.write()))["artifacts"]
    assert artifacts == [{"path": "x.csv", "kind": "table", "config_hash": "h"}]
