"""Adjoint problem, solved backward in time.

The multipliers lambda = (lambda1, lambda2, lambda3) are the exact discrete
adjoint of the implicit Euler scheme of the direct problem. With
H(u) = S'(u)^T the transposed spatial Jacobian, w_n the trapezoid weights
of the misfit and mu^{nt+1} = 0, step n = nt..1 solves

    (M + tau H(u^n)) mu^n = M mu^{n+1} - w_n M (u3^n - uhat3^n) e_3

with lambda = 0 at x = 1. mu^n is the backward Euler value carried from t_n
to t_{n-1}, so it is stored at level n-1: lam[n-1] = mu^n and lam[nt] = 0.
The gradient pairs the state at level n with lam[n-1].
"""
import logging
import time
from dataclasses import dataclass

import numpy as np

from app.models import NondimParams
from app.services.fem1d import (
    Mesh1D,
    SingularSystemError,
    TridiagonalMatrix,
    assemble_mass,
    assemble_weighted_mass,
    at_gauss,
    element_gradients,
    kron_identity,
    solve_block_tridiagonal,
)
from app.services.forward_solver import StateTrajectory, TimeGrid, apply_dirichlet_rows
from app.services.observations import ObservationSet, check_same_grid

logger = logging.getLogger(__name__)


class AdjointSolveError(Exception):
    """Raised when a backward step cannot be solved"""

    def __init__(self, step: int, message: str):
        self.step = step
        super().__init__(f"Adjoint solve failed at time level {step}: {message}")


@dataclass(frozen=True)
class AdjointTrajectory:
    """Adjoint solution lam[n, j, i] for time level n, node j, field i"""
    lam: np.ndarray
    mesh: Mesh1D
    time_grid: TimeGrid

    @property
    def lambda1(self) -> np.ndarray:
        return self.lam[:, :, 0]

    @property
    def lambda2(self) -> np.ndarray:
        return self.lam[:, :, 1]

    @property
    def lambda3(self) -> np.ndarray:
        return self.lam[:, :, 2]

    @property
    def gamma(self) -> np.ndarray:
        """Multiplier of the initial condition, lambda(x, 0)"""
        return self.lam[0]


def adjoint_operator(U: np.ndarray, p: NondimParams, mesh: Mesh1D) -> TridiagonalMatrix:
    """
    Spatial adjoint operator H(u) at a state U of shape (nod, 3).

    Row i of block (j, k): equation tested with eta_i at node j, unknown
    lambda_k at node k.
        eta1: (-(1 - 2u1) + delta1 u3) lambda1 - D2 u2' lambda2'
        eta2: -rho2 (1 - 2u2) lambda2 + D2 (1 - u1) lambda2' eta2' - delta3 lambda3
        eta3: delta3 lambda3 + lambda3' eta3' + delta1 u1 lambda1
    """
    u_q = at_gauss(U)
    u1, u2, u3 = u_q[..., 0], u_q[..., 1], u_q[..., 2]
    c = np.zeros(u1.shape + (3, 3))
    c[..., 0, 0] = -(1.0 - 2.0 * u1) + p.delta1 * u3
    c[..., 1, 1] = -p.rho2 * (1.0 - 2.0 * u2)
    c[..., 1, 2] = -p.delta3
    c[..., 2, 2] = p.delta3
    c[..., 2, 0] = p.delta1 * u1
    h_op = assemble_weighted_mass(mesh, c)
    lower, main, upper = h_op.lower.copy(), h_op.main.copy(), h_op.upper.copy()

    h = mesh.h
    w2 = p.D2 * (1.0 - 0.5 * (U[:-1, 0] + U[1:, 0])) / h
    w3 = np.full(mesh.n_elements, 1.0 / h)
    for field_index, w in ((1, w2), (2, w3)):
        main[:-1, field_index, field_index] += w
        main[1:, field_index, field_index] += w
        upper[:-1, field_index, field_index] -= w
        lower[1:, field_index, field_index] -= w

    # -D2 u2' lambda2' eta1: eta1 integrates to h/2 per element node
    a = 0.5 * p.D2 * element_gradients(mesh, U[:, 1])
    main[:-1, 0, 1] += a
    upper[:-1, 0, 1] -= a
    lower[1:, 0, 1] += a
    main[1:, 0, 1] -= a
    return TridiagonalMatrix(lower, main, upper)


def solve_adjoint(
    p: NondimParams,
    traj: StateTrajectory,
    obs: ObservationSet,
    mesh: Mesh1D,
    tg: TimeGrid,
) -> AdjointTrajectory:
    """
    Sweep the adjoint equations from lambda(T) = 0 back to t = 0.

    The step producing lam[n-1] uses the state coefficients and the misfit
    of time level n, weighted like the misfit in J. The misfit at t = 0 does
    not depend on delta1 and never enters.

    Raises:
        GridMismatchError: If trajectory, observations and grids disagree
        AdjointSolveError: If a backward step matrix is singular
    """
    check_same_grid(mesh, tg, traj.mesh, traj.time_grid, "trajectory")
    check_same_grid(mesh, tg, obs.mesh, obs.time_grid, "observations")
    started = time.perf_counter()

    mass = assemble_mass(mesh)
    block_mass = kron_identity(mass)
    tau = tg.tau
    weights = tg.trapezoid_weights()
    lam = np.zeros((tg.nt + 1, mesh.nod, 3))
    misfit = traj.u3 - obs.uhat3
    zero_bc = np.zeros(3)

    for n in range(tg.nt, 0, -1):
        h_op = adjoint_operator(traj.u[n], p, mesh)
        system = TridiagonalMatrix(
            block_mass.lower + tau * h_op.lower,
            block_mass.main + tau * h_op.main,
            block_mass.upper + tau * h_op.upper,
        )
        rhs = mass.matvec(lam[n])
        rhs[:, 2] -= weights[n] * mass.matvec(misfit[n])
        rhs, system = apply_dirichlet_rows(rhs, system, zero_bc)
        try:
            lam[n - 1] = solve_block_tridiagonal(system, rhs)
        except SingularSystemError as e:
            raise AdjointSolveError(n - 1, str(e)) from e

    logger.info(
        f"Adjoint solve delta1={p.delta1:.6g}: nod={mesh.nod}, nt={tg.nt}, "
        f"{time.perf_counter() - started:.2f}s"
    )
    return AdjointTrajectory(lam=lam, mesh=mesh, time_grid=tg)
