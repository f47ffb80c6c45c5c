"""Residual-based a posteriori error indicators for the forward solution.

For every step n >= 1, field i and element K:

    eta_{K,i}^2 = h^2 ||R_i||^2_{L2(K)} + h/2 * sum over interior nodes of K of J_i^2

R_i is the strong residual of the backward-Euler equation on K. Second
derivatives of linear elements vanish, so only the product rule term of the
nonlinear u2 diffusion survives inside elements. J_i is the jump of the
normal flux at an interior node; u1 does not diffuse and has no jump. Each
jump is shared by its two elements, hence the factor 1/2.

The global value of field i is the maximum over steps of the root-sum-square
over elements.
"""
import logging
from dataclasses import dataclass

import numpy as np

from app.models import NondimParams
from app.services.fem1d import GAUSS_WEIGHTS, Mesh1D, at_gauss, element_gradients
from app.services.forward_solver import StateTrajectory, TimeGrid
from app.services.model_core import reaction
from app.services.observations import check_same_grid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ErrorEstimate:
    """Element indicators indicators[i, n-1, e] for field i+1, step n and element e"""
    indicators: np.ndarray
    mesh: Mesh1D
    time_grid: TimeGrid

    def per_step(self) -> np.ndarray:
        """Root-sum-square over elements, shape (3, nt)"""
        return np.sqrt(np.sum(self.indicators ** 2, axis=-1))

    @property
    def eta(self) -> np.ndarray:
        if self.indicators.shape[1] == 0:
            return np.zeros(3)
        return self.per_step().max(axis=1)

    @property
    def eta1(self) -> float:
        return float(self.eta[0])

    @property
    def eta2(self) -> float:
        return float(self.eta[1])

    @property
    def eta3(self) -> float:
        return float(self.eta[2])


def element_indicators(residual_at_gauss: np.ndarray, jumps: np.ndarray, h: float) -> np.ndarray:
    """
    Combine element residuals and nodal flux jumps into element indicators.

    Args:
        residual_at_gauss: Strong residual at the quadrature points, (n_elements, 3, ...)
        jumps: Flux jump per node, (nod, ...), zero at boundary nodes
        h: Element size

    Returns:
        Nonnegative indicators of shape (n_elements, ...)
    """
    weights = GAUSS_WEIGHTS.reshape((1, 3) + (1,) * (residual_at_gauss.ndim - 2))
    residual_sq = h * np.sum(weights * residual_at_gauss ** 2, axis=1)
    jump_sq = 0.5 * (jumps[:-1] ** 2 + jumps[1:] ** 2)
    return np.sqrt(h ** 2 * residual_sq + h * jump_sq)


def _interior_jumps(flux: np.ndarray) -> np.ndarray:
    """Jump of an element-constant flux (n_elements, ...) at interior nodes, zero at both ends"""
    jumps = np.zeros((flux.shape[0] + 1,) + flux.shape[1:])
    jumps[1:-1] = flux[1:] - flux[:-1]
    return jumps


def estimate_aposteriori(traj: StateTrajectory, p: NondimParams, mesh: Mesh1D, tg: TimeGrid) -> ErrorEstimate:
    """
    Indicators for every field, step and element of a complete trajectory.

    Raises:
        GridMismatchError: If the trajectory lives on other grids
    """
    check_same_grid(mesh, tg, traj.mesh, traj.time_grid, "trajectory")
    h = mesh.h

    # (nod, nt) nodal values at levels n = 1..nt and their predecessors
    new = [traj.field(i)[1:].T for i in (1, 2, 3)]
    old = [traj.field(i)[:-1].T for i in (1, 2, 3)]

    new_q = [at_gauss(v) for v in new]
    old_q = [at_gauss(v) for v in old]
    f = reaction(new_q[0], new_q[1], new_q[2], p)

    g1 = element_gradients(mesh, new[0])
    g2 = element_gradients(mesh, new[1])
    g3 = element_gradients(mesh, new[2])

    r1 = (new_q[0] - old_q[0]) / tg.tau - f.f1
    r2 = (new_q[1] - old_q[1]) / tg.tau - f.f2 + p.D2 * (g1 * g2)[:, None]
    r3 = (new_q[2] - old_q[2]) / tg.tau - f.f3

    j1 = np.zeros_like(new[0])
    j2 = p.D2 * (1.0 - new[0]) * _interior_jumps(g2)
    j3 = _interior_jumps(g3)

    eta = np.stack([
        element_indicators(r1, j1, h),
        element_indicators(r2, j2, h),
        element_indicators(r3, j3, h),
    ])
    # (3, n_elements, nt) -> (3, nt, n_elements)
    estimate = ErrorEstimate(indicators=np.swapaxes(eta, 1, 2), mesh=mesh, time_grid=tg)
    logger.info(
        f"A posteriori estimate delta1={p.delta1:.6g}, nod={mesh.nod}: "
        f"eta1={estimate.eta1:.3e}, eta2={estimate.eta2:.3e}, eta3={estimate.eta3:.3e}"
    )
    return estimate
