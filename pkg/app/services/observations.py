import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from app.services.fem1d import Mesh1D
from app.services.forward_solver import TimeGrid

logger = logging.getLogger(__name__)


class GridMismatchError(ValueError):
    """Raised when fields compared or combined live on different grids"""
    pass


@dataclass(frozen=True)
class ObservationSet:
    """Measured or synthetic acid excess uhat3[n, j] on the solver grid"""
    uhat3: np.ndarray
    mesh: Mesh1D
    time_grid: TimeGrid
    sigma: Optional[float] = None
    seed: Optional[int] = None

    def __post_init__(self):
        expected = (self.time_grid.nt + 1, self.mesh.nod)
        if self.uhat3.shape != expected:
            raise GridMismatchError(f"uhat3 has shape {self.uhat3.shape}, expected {expected}")
        if not np.all(np.isfinite(self.uhat3)):
            raise ValueError("uhat3 contains non-finite values")


def check_same_grid(mesh: Mesh1D, time_grid: TimeGrid, other_mesh: Mesh1D, other_grid: TimeGrid, what: str):
    """
    Ensure two objects share the mesh and time grid.

    Raises:
        GridMismatchError: If node count, step or final time differ
    """
    if mesh.nod != other_mesh.nod:
        raise GridMismatchError(f"{what}: node counts differ ({mesh.nod} vs {other_mesh.nod})")
    if time_grid.nt != other_grid.nt or abs(time_grid.tau - other_grid.tau) > 1e-12:
        raise GridMismatchError(
            f"{what}: time grids differ (tau={time_grid.tau}, nt={time_grid.nt} vs "
            f"tau={other_grid.tau}, nt={other_grid.nt})"
        )
