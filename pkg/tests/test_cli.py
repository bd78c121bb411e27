"""Exit codes, emission, and determinism of the command line harness."""

import json

import pytest

from plhom.cli import main

SMALL_SWEEP = """\
dim: 1
p: 2.0
weight: {kind: layered, base: 2.0, amplitude: 1.0}
k_list: [2, 3]
mesh_m: 8
cell_n: 32
source: {kind: constant, value: 1.0}
tau: 2.0
"""


@pytest.fixture()
def cfg_file(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(SMALL_SWEEP)
    return path


def test_missing_config_is_config_error(tmp_path, capsys):
    rc = main(["sweep", "--config", str(tmp_path / "nope.yaml")])
    assert rc == 2
    assert "config error" in capsys.readouterr().err


def test_bad_config_key_is_config_error(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("dim: 1\np: 2.0\nweight: {kind: layered, base: 2}\nzzz: 1\n")
    rc = main(["cell", "--config", str(path)])
    assert rc == 2
    assert "unknown" in capsys.readouterr().err


def test_cell_writes_report(cfg_file, tmp_path, capsys):
    out = tmp_path / "out"
    rc = main(["cell", "--config", str(cfg_file), "--out", str(out)])
    assert rc == 0
    lines = (out / "cell.csv").read_text().splitlines()
    assert lines[0] == "key,value"
    captured = capsys.readouterr().out
    assert "corrector" in captured


def test_effective_accepts_directions(cfg_file, capsys):
    rc = main(["effective", "--config", str(cfg_file), "--xi", "2"])
    assert rc == 0
    out = capsys.readouterr().out
    # degree p-1 = 1 homogeneity: ahat(2) = 2 sqrt(3)
    assert "3.4641" in out


def test_bad_direction_is_config_error(cfg_file, capsys):
    rc = main(["cell", "--config", str(cfg_file), "--xi", "1,0"])
    assert rc == 2
    assert "direction" in capsys.readouterr().err


def test_solve_and_homogenized(cfg_file, capsys):
    assert main(["solve", "--config", str(cfg_file)]) == 0
    assert main(["solve", "--config", str(cfg_file), "--homogenized"]) == 0
    out = capsys.readouterr().out
    assert "oscillating" in out and "homogenized" in out


def test_solve_rejects_bad_eps(cfg_file, capsys):
    rc = main(["solve", "--config", str(cfg_file), "--eps", "1.5"])
    assert rc == 2


def test_verify_clean_model(cfg_file, tmp_path):
    out = tmp_path / "v"
    rc = main([
        "verify", "--config", str(cfg_file), "--out", str(out),
        "--format", "json", "--seed", "7",
    ])
    assert rc == 0
    payload = json.loads((out / "verify.json").read_text())
    assert payload["report"]["flux_violations"] == 0
    assert payload["meta"]["seed"] == 7


def test_section5_oracle(cfg_file, capsys):
    rc = main(["section5", "--config", str(cfg_file)])
    assert rc == 0
    assert "oracle" in capsys.readouterr().out


def test_sweep_writes_and_is_byte_identical(cfg_file, tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["sweep", "--config", str(cfg_file), "--out", str(out1)]) == 0
    assert main(["sweep", "--config", str(cfg_file), "--out", str(out2)]) == 0
    b1 = (out1 / "sweep.csv").read_bytes()
    b2 = (out2 / "sweep.csv").read_bytes()
    assert b1 == b2
    assert b1.decode().splitlines()[0] == "eps,h,tau,err_u_lp,err_grad_lp,runtime_s"
    # JSON carries the same rows plus metadata
    payload = json.loads((out1 / "sweep.json").read_text())
    assert len(payload["report"]["rows"]) == 2
    assert payload["meta"]["version"]


def test_sweep_abort_maps_to_solver_failure(tmp_path, capsys):
    path = tmp_path / "hard.yaml"
    path.write_text(
        "dim: 1\np: 2.0\nweight: {kind: layered, base: 2.0, amplitude: 1.0}\n"
        "k_list: [2]\nmesh_m: 8\ncell_n: 16\n"
        "source: {kind: constant, value: 1.0}\n"
        "tau: 2.0\ntol: 1.0e-15\nmax_iter: 1\n"
    )
    rc = main(["sweep", "--config", str(path)])
    assert rc == 1
    assert "aborted" in capsys.readouterr().err
