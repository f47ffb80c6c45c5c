"""CSV readers and writers for fields, traces, studies and observations.

All files are UTF-8 with a header row, ',' separator and '.' decimal
point. Floats are written with repr so values round-trip exactly.
"""
import csv
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, TextIO

import numpy as np

from app.models import RecoveryRow, RefinementRow, StudyRow, SweepSample, TraceEntry
from app.services.adjoint_solver import AdjointTrajectory
from app.services.error_estimator import ErrorEstimate
from app.services.fem1d import Mesh1D
from app.services.forward_solver import StateTrajectory, TimeGrid
from app.services.observations import GridMismatchError, ObservationSet


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return ";".join(_fmt(v) for v in value)
    return str(value)


def _open(path: Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path.open('w', encoding='utf-8', newline='')


def _write_field_rows(f: TextIO, header: Sequence[str], times: np.ndarray, x: np.ndarray, fields: np.ndarray):
    writer = csv.writer(f)
    writer.writerow(header)
    for n, t in enumerate(times):
        for j, xj in enumerate(x):
            writer.writerow([_fmt(t), _fmt(xj)] + [_fmt(v) for v in fields[n, j]])


def write_trajectory_csv(path: Path, traj: StateTrajectory):
    """Columns t, x, u1, u2, u3; one row per node per time level"""
    with _open(path) as f:
        _write_field_rows(f, ["t", "x", "u1", "u2", "u3"], traj.time_grid.times, traj.mesh.nodes, traj.u)


def write_adjoint_csv(path: Path, adj: AdjointTrajectory):
    """Columns t, x, lambda1, lambda2, lambda3"""
    with _open(path) as f:
        _write_field_rows(
            f, ["t", "x", "lambda1", "lambda2", "lambda3"], adj.time_grid.times, adj.mesh.nodes, adj.lam
        )


def write_trace_csv(path: Path, trace: Iterable[TraceEntry]):
    """Columns iter, delta1, J, grad"""
    with _open(path) as f:
        writer = csv.writer(f)
        writer.writerow(["iter", "delta1", "J", "grad"])
        for entry in trace:
            writer.writerow([entry.iteration, _fmt(entry.delta1), _fmt(entry.J), _fmt(entry.grad)])


def write_estimate_csv(path: Path, estimate: ErrorEstimate):
    """
    Columns field, step, element, indicator.

    After the element rows, one summary row per field carries step "max"
    and the global value with an empty element column.
    """
    with _open(path) as f:
        writer = csv.writer(f)
        writer.writerow(["field", "step", "element", "indicator"])
        n_fields, n_steps, n_elements = estimate.indicators.shape
        for i in range(n_fields):
            for n in range(n_steps):
                for e in range(n_elements):
                    writer.writerow([i + 1, n + 1, e, _fmt(estimate.indicators[i, n, e])])
        for i, value in enumerate(estimate.eta):
            writer.writerow([i + 1, "max", "", _fmt(value)])


def _write_with_metadata(path: Path, header: Sequence[str], rows: Iterable[Sequence], metadata: Optional[Dict]):
    with _open(path) as f:
        if metadata:
            f.write("# " + " ".join(f"{k}={_fmt(v)}" for k, v in metadata.items()) + "\n")
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_study_csv(path: Path, rows: Iterable[StudyRow], metadata: Optional[Dict] = None):
    """Columns sigma, mean, std, rel_error, trials, failures, flagged after a '# key=value' line"""
    _write_with_metadata(
        path,
        ["sigma", "mean", "std", "rel_error", "trials", "failures", "flagged"],
        ([r.sigma, r.mean, r.std, r.rel_error, r.trials, r.failures, int(r.flagged)] for r in rows),
        metadata,
    )


def write_recovery_csv(path: Path, rows: Iterable[RecoveryRow], metadata: Optional[Dict] = None):
    _write_with_metadata(
        path,
        ["delta1_hat", "mean", "std", "trials", "failures"],
        ([r.delta1_hat, r.mean, r.std, r.trials, r.failures] for r in rows),
        metadata,
    )


def write_sweep_csv(path: Path, curve: Iterable[SweepSample], metadata: Optional[Dict] = None):
    _write_with_metadata(path, ["delta1", "J"], ([s.delta1, s.J] for s in curve), metadata)


def write_refinement_csv(path: Path, rows: Iterable[RefinementRow], metadata: Optional[Dict] = None):
    _write_with_metadata(
        path,
        ["nod", "tau", "delta1", "J", "grad_adjoint", "grad_fd", "rel_error"],
        ([r.nod, r.tau, r.delta1, r.J, r.grad_adjoint, r.grad_fd, r.rel_error] for r in rows),
        metadata,
    )


def write_observations_csv(path: Path, obs: ObservationSet):
    """Columns x, t, u3hat; one row per (node, step), node-major"""
    x = obs.mesh.nodes
    times = obs.time_grid.times
    with _open(path) as f:
        writer = csv.writer(f)
        writer.writerow(["x", "t", "u3hat"])
        for j, xj in enumerate(x):
            for n, t in enumerate(times):
                writer.writerow([_fmt(xj), _fmt(t), _fmt(obs.uhat3[n, j])])


def read_observations_csv(path: Path, mesh: Mesh1D, tg: TimeGrid, tol: float = 1e-9) -> ObservationSet:
    """
    Read an `x,t,u3hat` file onto the solver grid.

    Rows may come in any order but must cover every (node, level) pair
    exactly once.

    Raises:
        ValueError: If the header or a value is malformed
        GridMismatchError: If the coordinates do not match the grids
    """
    x = mesh.nodes
    times = tg.times
    uhat3 = np.full((tg.nt + 1, mesh.nod), np.nan)
    seen = np.zeros(uhat3.shape, dtype=bool)

    with Path(path).open('r', encoding='utf-8', newline='') as f:
        # line numbers count the comment lines too
        lines = [(lineno, line) for lineno, line in enumerate(f, start=1) if not line.startswith('#')]
    rows = [(lineno, row) for lineno, line in lines for row in csv.reader([line]) if row]

    header = [h.strip() for h in rows[0][1]] if rows else []
    if header != ["x", "t", "u3hat"]:
        raise ValueError(f"Expected header x,t,u3hat, got {','.join(header)}")
    for lineno, row in rows[1:]:
        if len(row) != 3:
            raise ValueError(f"Line {lineno}: expected 3 columns, got {len(row)}")
        try:
            xv, tv, value = (float(v) for v in row)
        except ValueError as e:
            raise ValueError(f"Line {lineno}: {e}") from e
        j = int(round(xv * mesh.n_elements))
        n = int(round(tv / tg.tau))
        if not (0 <= j < mesh.nod and 0 <= n <= tg.nt) or abs(x[j] - xv) > tol or abs(times[n] - tv) > tol:
            raise GridMismatchError(f"Line {lineno}: ({xv}, {tv}) is not a grid point")
        if seen[n, j]:
            raise ValueError(f"Line {lineno}: duplicate entry for ({xv}, {tv})")
        uhat3[n, j] = value
        seen[n, j] = True

    missing = int(np.count_nonzero(~seen))
    if missing:
        raise GridMismatchError(f"{missing} grid points have no observation")
    return ObservationSet(uhat3=uhat3, mesh=mesh, time_grid=tg)


def read_metadata(path: Path) -> Dict[str, str]:
    """Key/value pairs of a leading '# key=value ...' line, empty if absent"""
    with Path(path).open('r', encoding='utf-8') as f:
        first = f.readline()
    if not first.startswith('#'):
        return {}
    pairs: List[str] = first[1:].split()
    return dict(p.split('=', 1) for p in pairs if '=' in p)
