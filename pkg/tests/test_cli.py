import csv

import pytest

from app.cli import main
from app.parsers.csv_io import read_metadata

SMALL = ["--nod", "21", "--tau", "0.5", "--t-final", "2"]


def _rows(path):
    with path.open() as f:
        return list(csv.reader(line for line in f if not line.startswith("#")))


def test_nondim_prints_reference_groups(capsys):
    assert main(["nondim", "--d1", "0.05"]) == 0

    out = capsys.readouterr().out
    values = dict(item.split("=") for item in out.split())
    assert float(values["delta1"]) == pytest.approx(0.5)
    assert float(values["delta3"]) == pytest.approx(110.0)
    assert float(values["L0"]) == pytest.approx(1e-5)


def test_forward_writes_trajectory(tmp_path, capsys):
    out = tmp_path / "traj.csv"

    assert main(["forward", *SMALL, "--delta1", "12.5", "--out", str(out)]) == 0

    rows = _rows(out)
    assert rows[0] == ["t", "x", "u1", "u2", "u3"]
    assert len(rows) == 1 + 5 * 21
    assert "newton_iterations=" in capsys.readouterr().out


def test_config_file_is_overridden_by_flags(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# coarse run\nnod = 11\ntau = 0.5\nt-final = 2\n")
    out = tmp_path / "traj.csv"

    assert main(["forward", "--config", str(cfg), "--out", str(out)]) == 0
    assert len(_rows(out)) == 1 + 5 * 11

    assert main(["forward", "--config", str(cfg), "--nod", "21", "--out", str(out)]) == 0
    assert len(_rows(out)) == 1 + 5 * 21


def test_unknown_config_key_is_an_input_error(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("mesh_size = 11\n")

    assert main(["forward", "--config", str(cfg)]) == 2
    assert "mesh_size" in capsys.readouterr().err


def test_invalid_grid_is_an_input_error(capsys):
    assert main(["forward", "--nod", "2"]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_missing_observation_file_is_an_input_error(tmp_path):
    assert main(["adjoint", *SMALL, "--obs", str(tmp_path / "missing.csv")]) == 2


def test_gradcheck_reports_both_gradients(capsys):
    assert main(["gradcheck", *SMALL, "--delta1", "8"]) == 0

    out = capsys.readouterr().out
    assert "adjoint=" in out and "fd=" in out
    assert out.count("taylor") == 3


def test_fit_from_true_value_converges(tmp_path, capsys):
    out = tmp_path / "trace.csv"

    code = main(["fit", *SMALL, "--delta1-hat", "12.5", "--delta1-init", "12.5", "--out", str(out)])

    assert code == 0
    assert "termination=gradient" in capsys.readouterr().out
    assert _rows(out)[0] == ["iter", "delta1", "J", "grad"]


def test_noise_study_is_bit_identical_across_runs(tmp_path):
    args = [
        "noise-study", *SMALL, "--delta1-hat", "12.5", "--sigma", "0.05", "--sigma", "0.1",
        "--trials", "2", "--delta1-init", "12.5", "--seed", "11", "--workers", "1", "--no-cache",
    ]
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"

    assert main([*args, "--out", str(first)]) == 0
    assert main([*args, "--out", str(second)]) == 0

    assert first.read_bytes() == second.read_bytes()
    meta = read_metadata(first)
    assert meta["seed"] == "11"
    assert meta["nod"] == "21"
    assert [row[0] for row in _rows(first)[1:]] == ["0.05", "0.1"]


def test_error_estimate_prints_global_values(capsys):
    assert main(["error-estimate", *SMALL, "--delta1", "12.5"]) == 0

    assert "eta1=" in capsys.readouterr().out
