import csv
import json
import os

import pytest

from meyers_lab.cli import RunConfig, main, run
from meyers_lab.mesh import read_mesh


def _csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_threshold_json(capsys):
    assert main(["threshold", "--mu", "0.5", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["mode"] == "lp" and out["expected"] == 4.0
    assert abs(out["p_star"] - 4.0) <= 0.4


def test_threshold_holder(capsys):
    assert main(["threshold", "--mu", "0.25", "--mode", "holder", "--json"]) == 0
    assert abs(json.loads(capsys.readouterr().out)["alpha_star"] - 0.25) <= 1e-6


def test_solve_zero_data_writes_zeros(tmp_path, capsys):
    out, mesh_out = tmp_path / "u.csv", tmp_path / "mesh.txt"
    assert main(["solve", "--mu", "0.5", "--out", str(out), "--mesh-out", str(mesh_out),
                 "--json"]) == 0
    info = json.loads(capsys.readouterr().out)
    rows = _csv(out)
    assert len(rows) == info["n_vertices"] == read_mesh(mesh_out).n_vertices
    assert all(float(r["u"]) == 0.0 for r in rows)


def test_solve_oracle_boundary(tmp_path):
    out = tmp_path / "u.csv"
    assert main(["solve", "--mu", "0.5", "--bc", "oracle", "--grading", "2",
                 "--refine", "1", "--out", str(out)]) == 0
    rows = _csv(out)
    assert max(abs(float(r["u"])) for r in rows) <= 1.0 + 1e-9


def test_verify_oracle_decreasing(tmp_path):
    out = tmp_path / "res.csv"
    assert main(["verify-oracle", "--mu", "0.5", "--csv", str(out)]) == 0
    res = [float(r["max_weak_residual"]) for r in _csv(out)]
    assert len(res) == 4
    assert all(b < a for a, b in zip(res, res[1:]))


@pytest.mark.parametrize("argv", [
    ["solve", "--mu", "1.5"],
    ["solve"],
    ["solve", "--mu", "0.5", "--field", "identity"],
    ["solve", "--mu", "0.5", "--sectors", "10"],
    ["solve", "--mu", "0.5", "--rhs", "const:1"],
    ["solve", "--field", "identity", "--bc", "oracle"],
    ["bmo", "--mu", "0.5", "--quad", "32"],
    ["scan-meyers", "--mu", "0.5", "--p-min", "5", "--p-max", "3"],
    ["convergence", "--levels", "0"],
])
def test_validation_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["code"] == 2 and err["message"]


def test_outputs_are_write_once(tmp_path, capsys):
    out = tmp_path / "u.csv"
    out.write_text("keep me\n")
    assert main(["solve", "--mu", "0.5", "--out", str(out)]) == 2
    assert out.read_text() == "keep me\n"


def test_runconfig_roundtrip():
    cfg = RunConfig(command="bmo", mu=0.3, grid=9, quad=128, json=True)
    assert RunConfig.from_json(cfg.to_json()) == cfg


def test_run_accepts_config_object(capsys):
    assert run(RunConfig(command="threshold", mu=0.75, json=True)) == 0
    assert json.loads(capsys.readouterr().out)["p_star"] == pytest.approx(8.0, abs=0.4)


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_reproduce_unwritable_dir(tmp_path):
    d = tmp_path / "ro"
    d.mkdir()
    d.chmod(0o500)
    try:
        assert main(["reproduce", "--out-dir", str(d)]) == 2
    finally:
        d.chmod(0o700)


def test_reproduce_unwritable_dir_reported(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr("meyers_lab.report.os.access", lambda path, mode: False)
    assert main(["reproduce", "--out-dir", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["code"] == 2
    assert not (tmp_path / "report.md").exists()


def test_reproduce_out_dir_is_a_file(tmp_path, capsys):
    f = tmp_path / "file"
    f.write_text("")
    assert main(["reproduce", "--out-dir", str(f)]) == 2


def test_scan_meyers_csv(tmp_path):
    out = tmp_path / "scan.csv"
    assert main(["scan-meyers", "--mu", "0.5", "--p-max", "4", "--p-step", "0.5",
                 "--csv", str(out)]) == 0
    rows = _csv(out)
    assert list(rows[0]) == ["p", "max_ratio", "argmax_center_x", "argmax_center_y", "argmax_radius"]
    assert [float(r["p"]) for r in rows] == [2.0, 2.5, 3.0, 3.5, 4.0]
    assert all(float(r["max_ratio"]) > 0 for r in rows)


def test_bmo_json(capsys):
    assert main(["bmo", "--mu", "0.5", "--grid", "9", "--radii-min-exp", "3", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert set(out) == {"value", "argmax_center", "argmax_radius", "n_balls"}
    assert out["n_balls"] == 81 * 4
    assert 0 < out["value"] <= 3.0 * 3.141592653589793 / 2


def test_convergence_csv(tmp_path):
    out = tmp_path / "conv.csv"
    assert main(["convergence", "--levels", "1", "--csv", str(out)]) == 0
    rows = _csv(out)
    assert len(rows) == 2 and float(rows[1]["rate"]) >= 0.9
