import csv

import numpy as np
import pytest

from app.models import StudyRow, TraceEntry
from app.parsers.config_file import load_config_file, parse_config_text
from app.parsers.csv_io import (
    read_metadata,
    read_observations_csv,
    write_observations_csv,
    write_study_csv,
    write_trace_csv,
    write_trajectory_csv,
)
from app.services.fem1d import Mesh1D
from app.services.forward_solver import TimeGrid
from app.services.observations import GridMismatchError, ObservationSet


class TestConfigFile:
    def test_parse_keys_and_values(self):
        content = """
        # baseline run
        nod = 201
        t-final=20
        Delta1_hat = 12.5
        sigmas = 0.05,0.1
        """

        settings = parse_config_text(content)

        assert settings == {"nod": "201", "t_final": "20", "delta1_hat": "12.5", "sigmas": "0.05,0.1"}

    def test_later_keys_win(self):
        assert parse_config_text("seed = 1\nseed = 2") == {"seed": "2"}

    @pytest.mark.parametrize("line", ["nod 201", "= 3", "nod =", "1nod = 3"])
    def test_malformed_lines_are_rejected(self, line):
        with pytest.raises(ValueError, match="line 1"):
            parse_config_text(line)

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("tau = 0.25\n", encoding="utf-8")

        assert load_config_file(path) == {"tau": "0.25"}


def _observations(nod=5, tau=0.5, t_final=1.0, seed=3):
    mesh, tg = Mesh1D(nod), TimeGrid(tau, t_final)
    values = np.random.default_rng(seed).standard_normal((tg.nt + 1, nod))
    return ObservationSet(uhat3=values, mesh=mesh, time_grid=tg)


class TestObservationsCsv:
    def test_round_trip_is_exact(self, tmp_path):
        obs = _observations()
        path = tmp_path / "obs.csv"

        write_observations_csv(path, obs)
        loaded = read_observations_csv(path, obs.mesh, obs.time_grid)

        assert np.array_equal(loaded.uhat3, obs.uhat3)

    def test_rows_in_any_order(self, tmp_path):
        obs = _observations()
        path = tmp_path / "obs.csv"
        write_observations_csv(path, obs)
        lines = path.read_text().splitlines()
        path.write_text("\n".join([lines[0]] + lines[:0:-1]) + "\n")

        assert np.array_equal(read_observations_csv(path, obs.mesh, obs.time_grid).uhat3, obs.uhat3)

    def test_missing_points_are_reported(self, tmp_path):
        obs = _observations()
        path = tmp_path / "obs.csv"
        write_observations_csv(path, obs)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")

        with pytest.raises(GridMismatchError, match="1 grid points"):
            read_observations_csv(path, obs.mesh, obs.time_grid)

    def test_off_grid_points_are_rejected(self, tmp_path):
        path = tmp_path / "obs.csv"
        path.write_text("x,t,u3hat\n0.3,0.0,1.0\n")

        with pytest.raises(GridMismatchError):
            read_observations_csv(path, Mesh1D(5), TimeGrid(0.5, 1.0))

    def test_duplicates_are_rejected(self, tmp_path):
        path = tmp_path / "obs.csv"
        path.write_text("x,t,u3hat\n0.25,0.5,1.0\n0.25,0.5,2.0\n")

        with pytest.raises(ValueError, match="duplicate"):
            read_observations_csv(path, Mesh1D(5), TimeGrid(0.5, 1.0))

    def test_error_line_numbers_count_comment_lines(self, tmp_path):
        path = tmp_path / "obs.csv"
        path.write_text("# seed=7 nod=5\nx,t,u3hat\n0.25,0.5,1.0\n0.25,0.5,2.0\n")

        with pytest.raises(ValueError, match="^Line 4: duplicate"):
            read_observations_csv(path, Mesh1D(5), TimeGrid(0.5, 1.0))

    def test_unparseable_value_names_its_line(self, tmp_path):
        path = tmp_path / "obs.csv"
        path.write_text("# seed=7\n\nx,t,u3hat\n0.25,0.5,abc\n")

        with pytest.raises(ValueError, match="^Line 4:"):
            read_observations_csv(path, Mesh1D(5), TimeGrid(0.5, 1.0))

    def test_wrong_header_is_rejected(self, tmp_path):
        path = tmp_path / "obs.csv"
        path.write_text("t,x,u3\n")

        with pytest.raises(ValueError, match="header"):
            read_observations_csv(path, Mesh1D(5), TimeGrid(0.5, 1.0))


class TestWriters:
    def test_study_csv_carries_metadata_line(self, tmp_path):
        path = tmp_path / "out" / "study.csv"
        rows = [
            StudyRow(sigma=0.05, mean=12.49, std=0.1, rel_error=0.0008, trials=30),
            StudyRow(sigma=0.3, mean=None, std=None, rel_error=None, trials=30, failures=30, flagged=True),
        ]

        write_study_csv(path, rows, {"seed": 7, "nod": 201, "bounds": (0.0, 20.0)})

        assert read_metadata(path) == {"seed": "7", "nod": "201", "bounds": "0.0;20.0"}
        with path.open() as f:
            body = list(csv.reader(line for line in f if not line.startswith("#")))
        assert body[0] == ["sigma", "mean", "std", "rel_error", "trials", "failures", "flagged"]
        assert body[1] == ["0.05", "12.49", "0.1", "0.0008", "30", "0", "0"]
        assert body[2] == ["0.3", "", "", "", "30", "30", "1"]

    def test_metadata_absent(self, tmp_path):
        path = tmp_path / "trace.csv"
        write_trace_csv(path, [TraceEntry(iteration=0, delta1=8.0, J=1e-3, grad=-2e-4)])

        assert read_metadata(path) == {}
        assert path.read_text().splitlines() == ["iter,delta1,J,grad", "0,8.0,0.001,-0.0002"]

    def test_trajectory_rows_are_time_major(self, tmp_path, small_trajectory):
        path = tmp_path / "traj.csv"

        write_trajectory_csv(path, small_trajectory)

        with path.open() as f:
            rows = list(csv.reader(f))
        nod = small_trajectory.mesh.nod
        assert rows[0] == ["t", "x", "u1", "u2", "u3"]
        assert len(rows) == 1 + (small_trajectory.time_grid.nt + 1) * nod
        assert float(rows[nod + 1][0]) == small_trajectory.time_grid.tau
