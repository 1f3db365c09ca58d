import json
import os

import pytest

from hartree_lab import cli
from hartree_lab.cli import (
    EXIT_COLLAPSE,
    EXIT_CONTRACT,
    EXIT_INVALID,
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    build_parser,
    config_from_args,
    main,
)
from hartree_lab.diagnostics import ConvergenceRow

LIMIT_ARGS = ["--family", "limit", "--m", "2", "--L", "8", "--n", "32", "--tol", "1e-9", "--max-iter", "4000"]


@pytest.fixture(scope="module")
def solved_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("solve"))
    code = main(["solve", *LIMIT_ARGS, "--out", out])
    return out, code


def test_power_of_two_rule(tmp_path):
    assert main(["solve", "--n", "100", "--out", str(tmp_path)]) == EXIT_INVALID


def test_unknown_config_key(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("speed: 3\n")
    assert main(["solve", "--config", str(path), "--out", str(tmp_path)]) == EXIT_INVALID


def test_verify_needs_a_state(tmp_path):
    assert main(["verify", "--out", str(tmp_path)]) == EXIT_INVALID
    missing = str(tmp_path / "absent.fld")
    assert main(["verify", "--state", missing, "--out", str(tmp_path)]) == EXIT_INVALID


def test_flags_reach_the_config():
    args = build_parser().parse_args(["scan", "convergence", "--c", "4,8,16", "--lambda-c", "0.5"])
    cfg = config_from_args(args)
    assert args.kind == "convergence"
    assert cfg.c == [4.0, 8.0, 16.0]
    assert cfg.lambda_c == 0.5
    assert cfg.symmetrize is False


def test_solve_writes_state_and_manifest(solved_dir):
    out, code = solved_dir
    assert code == EXIT_OK
    for name in ("limit_ground_state.fld", "limit_ground_state.json", "limit_ground_state_profile.csv",
                 "limit_ground_state_profile.gp", "manifest.json"):
        assert os.path.exists(os.path.join(out, name))
    sidecar = json.load(open(os.path.join(out, "limit_ground_state.json")))
    assert sidecar["family"] == "limit" and sidecar["multiplier"] < 0 and sidecar["converged"]
    kinds = {a["kind"] for a in json.load(open(os.path.join(out, "manifest.json")))["artifacts"]}
    assert {"state", "sidecar", "radial-profile", "gnuplot"} <= kinds


def test_verify_reads_the_snapshot(solved_dir):
    out, _ = solved_dir
    state = os.path.join(out, "limit_ground_state.fld")
    code = main(["verify", *LIMIT_ARGS, "--state", state, "--kernel-eigs", "0", "--out", out])
    assert code in (EXIT_OK, EXIT_CONTRACT)
    report = json.load(open(os.path.join(out, "verify_report.json")))
    names = [c["name"] for c in report["checks"]]
    assert names == ["el_residual", "scaling_G2.1", "lemma_3.1", "limit_virial", "decay_lemma_2.1"]
    assert report["passed"] == (code == EXIT_OK)
    checks = {c["name"]: c for c in report["checks"]}
    assert checks["el_residual"]["residual"] <= 1e-7
    assert checks["scaling_G2.1"]["pass"]


def test_decay_bound_scan(tmp_path):
    out = str(tmp_path)
    code = main(["scan", "decay-bound", "--m", "1", "--c", "8", "--lambda-c", "0.5", "--L", "8", "--out", out])
    assert code in (EXIT_OK, EXIT_CONTRACT)
    summary = json.load(open(os.path.join(out, "decay_bound.json")))
    assert summary["violations"] == 0
    assert summary["single_point"]
    assert os.path.exists(os.path.join(out, "green.csv"))
    bound = {c["name"]: c for c in summary["checks"]}["green_lemma_2.3"]
    assert bound["pass"] and bound["residual"] == 0.0
    assert summary["passed"] == (code == EXIT_OK)


def test_supercritical_solve_exits_with_collapse(tmp_path):
    args = ["solve", "--family", "original", "--m", "1", "--N", "10", "--L", "8", "--n", "32",
            "--max-iter", "5000", "--out", str(tmp_path)]
    assert main(args) == EXIT_COLLAPSE


def test_unconverged_solve_exits_with_three(tmp_path):
    args = ["solve", "--family", "limit", "--m", "2", "--L", "8", "--n", "32", "--max-iter", "3",
            "--out", str(tmp_path)]
    assert main(args) == EXIT_NOT_CONVERGED
    sidecar = json.load(open(tmp_path / "limit_ground_state.json"))
    assert sidecar["converged"] is False


def test_fixed_seed_runs_are_byte_identical(tmp_path):
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        main(["solve", "--family", "limit", "--m", "2", "--L", "8", "--n", "32", "--max-iter", "40",
              "--seed", "3", "--out", str(out)])
        outputs.append(out)
    for artifact in ("limit_ground_state.fld", "limit_ground_state.json", "limit_ground_state_profile.csv"):
        assert (outputs[0] / artifact).read_bytes() == (outputs[1] / artifact).read_bytes()


def _rows(gradient_deltas):
    return [ConvergenceRow(c, 0.1 / c ** 2, 0.2 / c ** 2, 1.10, g) for c, g in zip((8.0, 16.0, 32.0), gradient_deltas)]


@pytest.mark.parametrize("gradient_deltas, expected", [((1.12, 1.11, 1.10), EXIT_OK),
                                                       ((1.40, 1.12, 1.10), EXIT_CONTRACT)])
def test_convergence_scan_checks_decay_agreement(tmp_path, monkeypatch, gradient_deltas, expected):
    monkeypatch.setattr(cli, "convergence_study", lambda *args, **kwargs: _rows(gradient_deltas))
    code = main(["scan", "convergence", "--c", "8,16,32", "--L", "8", "--n", "32", "--out", str(tmp_path)])
    assert code == expected
    summary = json.load(open(tmp_path / "convergence_summary.json"))
    assert summary["decay_agreement"] == (expected == EXIT_OK)
    assert summary["decreasing"]
    columns = open(tmp_path / "convergence.csv").readline().strip().split(",")
    assert "gradient_delta" in columns
