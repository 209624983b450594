import csv
import io
import subprocess
import sys

import numpy as np
import pytest

from kronexp.cli import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main, to_pgm

SMALL_FHN = ["--model", "fhn3d", "--n", "6", "--T", "0.02", "--steps", "10,20", "--reference-factor", "4"]


def _table(path):
    lines = path.read_text().splitlines()
    header = [l for l in lines if l.startswith("#")]
    body = [l for l in lines if not l.startswith("#")]
    return header, list(csv.DictReader(io.StringIO("\n".join(body))))


def _pgm(path):
    blob = path.read_bytes()
    magic, dims, maxval, rest = blob.split(b"\n", 3)
    w, h = map(int, dims.split())
    assert magic == b"P5" and maxval == b"255"
    return np.frombuffer(rest, dtype=np.uint8).reshape(h, w)


def test_verify_coefficients(capsys, tmp_path):
    assert main(["verify-coefficients", "--csv", str(tmp_path / "c.csv")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "10 schemes" in out and "FAIL" not in out
    rows = list(csv.DictReader((tmp_path / "c.csv").open()))
    assert {r["variant"] for r in rows} == {"two_term_real_2d", "two_term_complex", "three_term_real"}


def test_verify_coefficients_negative_control(capsys):
    assert main(["verify-coefficients", "--perturb", "1e-3"]) == EXIT_NUMERICAL
    assert "FAIL" in capsys.readouterr().out


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "kronexp.cli", "verify-coefficients", "--d", "4"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


def test_convergence_csv_and_rerun(tmp_path):
    args = ["convergence", *SMALL_FHN, "--method", "etd2rkds,exprk3ds_real"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    a = (tmp_path / "a" / "convergence.csv").read_bytes()
    assert a == (tmp_path / "b" / "convergence.csv").read_bytes()
    header, rows = _table(tmp_path / "a" / "convergence.csv")
    assert "# model=fhn3d" in header and "# seed=0" in header
    assert [(r["method"], int(r["steps"])) for r in rows] == [
        ("etd2rkds", 10), ("etd2rkds", 20), ("exprk3ds_real", 10), ("exprk3ds_real", 20)]
    assert all(r["status"] == "ok" and float(r["err_inf"]) > 0 for r in rows)
    assert float(rows[0]["err_inf"]) > float(rows[1]["err_inf"])


def test_workprecision_counts(tmp_path):
    args = ["workprecision", *SMALL_FHN, "--method", "exprk3ds_real,exprk3ds_cplx", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    _, rows = _table(tmp_path / "workprecision.csv")
    for r in rows:
        per = 15 if r["method"] == "exprk3ds_real" else 10
        steps = int(r["steps"])
        assert int(r["tucker_ops"]) == steps * 2 * per
        assert int(r["kronsum_actions"]) == steps * 2
        assert float(r["wall_time"]) > 0


def test_pattern_uniform_field(tmp_path):
    args = ["pattern", "--n", "12", "--T", "0.01", "--steps", "10", "--amplitude", "0",
            "--snapshot-every", "5", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    img = _pgm(tmp_path / "u_final.pgm")
    assert img.shape == (12, 12) and not img.any()
    assert (tmp_path / "u_step0000005.csv").exists() and (tmp_path / "u_step0000010.pgm").exists()
    modes = (tmp_path / "modes.txt").read_text()
    assert "# digest=" in modes
    assert [l for l in modes.splitlines() if not l.startswith("#")] == []


def test_pattern_three_dimensional_slice(tmp_path):
    args = ["pattern", "--model", "fhn3d", "--n", "8", "--T", "0.01", "--steps", "4", "--out", str(tmp_path)]
    assert main(args) == EXIT_OK
    assert _pgm(tmp_path / "u_final.pgm").shape == (8, 8)
    assert "# method=exprk3ds_real" in (tmp_path / "modes.txt").read_text()


def test_to_pgm_scaling():
    img = to_pgm(np.array([[0.0, 1.0], [2.0, 4.0]]))
    assert img.startswith(b"P5\n2 2\n255\n")
    assert sorted(img[-4:]) == [0, 64, 128, 255]


def test_config_file_overrides_flags(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("steps = 6\nrho = 10  # milder kinetics\n")
    out = tmp_path / "o"
    args = ["workprecision", *SMALL_FHN, "--method", "etd2rkds", "--config", str(cfg), "--out", str(out)]
    assert main(args) == EXIT_OK
    header, rows = _table(out / "workprecision.csv")
    assert [int(r["steps"]) for r in rows] == [6]
    assert "# rho=10.0" in header


@pytest.mark.parametrize("extra", [
    ["--n", "2"],
    ["--T", "-1"],
    ["--method", "rk4"],
    ["--steps", "0"],
    ["--steps", "a,b"],
    ["--reference-factor", "0"],
    ["--method", "exprk3_dense", "--n", "20"],
])
def test_validation_errors(tmp_path, extra, capsys):
    assert main(["convergence", "--model", "fhn3d", "--out", str(tmp_path), *extra]) == EXIT_VALIDATION
    assert "error" in capsys.readouterr().err


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("a1_v = 3\n")
    assert main(["pattern", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_VALIDATION
    bad.write_text("nonsense\n")
    assert main(["pattern", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert main(["pattern", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == EXIT_IO


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    args = ["pattern", "--n", "6", "--T", "0.001", "--steps", "1", "--out", str(blocker / "sub")]
    assert main(args) == EXIT_IO


def test_thread_limit_env(tmp_path, monkeypatch):
    monkeypatch.setenv("KRONEXP_THREADS", "1")
    assert main(["pattern", "--n", "6", "--T", "0.001", "--steps", "1", "--out", str(tmp_path)]) == EXIT_OK
