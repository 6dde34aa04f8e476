import subprocess
import sys

import pytest

from stokes_lod.cli import main

ARGS = ["--coarse", "1,2", "--fine", "4", "--eps", "3", "--ell", "1,2", "--seed", "7",
        "--threads", "1"]


def test_convergence_grid(tmp_path):
    assert main(["convergence", *ARGS, "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "convergence.csv").read_text().splitlines()
    assert lines[0].startswith("# config_sha256=") and lines[0].endswith("seed=7")
    assert len(lines) == 2 + 4


def test_repeatable_bytes(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["localization", *ARGS, "--out", str(a)]) == 0
    assert main(["localization", *ARGS, "--out", str(b), "--threads", "2"]) == 0
    assert (a / "localization.csv").read_bytes() == (b / "localization.csv").read_bytes()


def test_missing_config(tmp_path, capsys):
    path = tmp_path / "nope.cfg"
    assert main(["convergence", "--config", str(path)]) == 2
    assert str(path) in capsys.readouterr().err


def test_config_overridden_by_flags(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("coarse = 1\nfine = 4\neps = 3\nell = 1\nseed = 1\n")
    assert main(["convergence", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "convergence.csv").read_text().splitlines()[0].endswith("seed=5")


@pytest.mark.parametrize("argv", [
    ["convergence", "--fine", "2", "--coarse", "3", "--eps", "2"],
    ["convergence", "--ell", "x"],
    ["convergence", "--seed", "-4"],
    ["convergence", "--threads", "0"],
    ["bogus"],
    [],
])
def test_usage_errors(argv, tmp_path):
    try:
        code = main(argv + ["--out", str(tmp_path)] if argv else argv)
    except SystemExit as exc:
        code = exc.code
    assert code == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "stokes_lod", "solve", "--coarse", "1", "--fine", "3",
                           "--eps", "2", "--ell", "global", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "pressure_pp.txt").exists()
