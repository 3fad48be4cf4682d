from __future__ import annotations

import hashlib
import json

import numpy as np
import pytest

from collbreak.cli import main

SINGLE_CELL = """\
name: single
kernel: {alpha: 0.0, beta: 0.0}
daughter: {nu: 0.0}
grid: {x_min: 0.5, x_max: 1.5, cells: 1}
initial: {family: monodisperse, mass: 1.0, location: 1.0}
time: {t_end: 0.1}
"""


def cfg_file(tmp_path, text, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_run_writes_manifest(tmp_path):
    out = tmp_path / "run"
    assert main(["run", "mass-conservation-lambda15", "--out", str(out), "--quiet"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    for key in ("name", "status", "events", "bounds", "wall_time", "method", "steps",
                "final_moments", "escaped_mass", "ledger_drift", "config", "files"):
        assert key in summary
    assert summary["status"] == "completed"
    assert len(summary["files"]) == 2 + 51
    for rel, digest in summary["files"].items():
        assert hashlib.sha256((out / rel).read_bytes()).hexdigest() == digest
    data = np.loadtxt(out / "moments.csv", delimiter=",", skiprows=1)
    assert data.shape[0] == 51


def test_run_blowup_exit_code(tmp_path):
    out = tmp_path / "run"
    assert main(["run", "constant-kernel-oracle", "--out", str(out), "--quiet"]) == 2
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "blowup_detected"
    assert summary["events"]["blowup"] == pytest.approx(0.5, abs=0.005)
    assert (out / "oracle.csv").exists()
    assert "M_0" in summary["oracle_max_deviation"]


def test_config_error_exit_code(tmp_path, capsys):
    bad = cfg_file(tmp_path, SINGLE_CELL.replace("cells: 1", "cells: 1, speed: 2"))
    assert main(["run", bad, "--out", str(tmp_path / "x")]) == 1
    err = capsys.readouterr().err
    assert f"{bad}:4:" in err and "grid.speed" in err


def test_solver_failure_exit_code(tmp_path):
    text = SINGLE_CELL.replace("cells: 1", "cells: 8") + "control: {max_steps: 1}\n"
    assert main(["run", cfg_file(tmp_path, text), "--out", str(tmp_path / "x"), "--quiet"]) == 4


def test_bounds_single_cell(tmp_path, capsys):
    assert main(["bounds", cfg_file(tmp_path, SINGLE_CELL)]) == 0
    out = capsys.readouterr().out
    assert "rho=1 M0=1" in out
    assert "T₀ = 0.5" in out
    assert "T_exist_upper = 0.25" in out
    assert "T_exist_upper (rate 2) = 0.5" in out
    assert "T_shatter_upper: not applicable (needs α < 0)" in out


def test_bounds_not_applicable_and_table(capsys):
    assert main(["bounds", "mass-conservation-lambda15"]) == 0
    out = capsys.readouterr().out
    assert "T₀: not applicable (λ ≥ 1, global existence)" in out
    assert "M0 super-envelope growth rate = " in out
    assert main(["bounds", "shattering-sweep"]) == 0
    out = capsys.readouterr().out
    assert "m        T_shatter_upper" in out
    assert "-1       0" in out


def test_sweep_parallel_matches_serial(tmp_path):
    text = SINGLE_CELL.replace("cells: 1", "cells: 16").replace("x_min: 0.5", "x_min: 1.0e-3")
    text += "sweep: {parameter: grid.cells, values: [16, 32]}\n"
    path = cfg_file(tmp_path, text)
    assert main(["sweep", path, "--out", str(tmp_path / "a"), "--quiet"]) == 0
    assert main(["sweep", path, "--out", str(tmp_path / "b"), "--threads", "2", "--quiet"]) == 0
    a = json.loads((tmp_path / "a" / "trend.json").read_text())
    b = json.loads((tmp_path / "b" / "trend.json").read_text())
    assert a == b
    assert (tmp_path / "a" / "point_01" / "summary.json").exists()
    assert (tmp_path / "a" / "trend.csv").read_text() == (tmp_path / "b" / "trend.csv").read_text()


def test_sweep_requires_section(tmp_path):
    assert main(["sweep", cfg_file(tmp_path, SINGLE_CELL), "--quiet"]) == 1


def test_bad_threads():
    assert main(["run", "mass-conservation-lambda15", "--threads", "0"]) == 1


def test_verify_detects_injected_fault(tmp_path, capsys):
    assert main(["verify", "--inject-fault", "gain", "--quiet", "--out", str(tmp_path)]) == 3
    assert "verify failed: discretization.conservation" in capsys.readouterr().err
    assert "FAIL discretization.conservation" in (tmp_path / "verify.txt").read_text()
