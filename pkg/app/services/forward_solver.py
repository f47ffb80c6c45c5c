"""Direct problem: implicit Euler in time, linear FEM in space, Newton per step.

Per time step the discrete weak form tested with every hat function phi_j is

    M (U^n - U^{n-1}) - tau * [ (f(U^n), phi_j)
                                - D2 ((1 - u1) u2', phi_j') e_2
                                - (u3', phi_j') e_3 ] = 0

with Neumann conditions at x = 0 (natural) and the Dirichlet values
(u1, u2, u3) = (1, 0, 0) at x = 1 imposed by identity rows.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from app.models import NewtonOptions, NondimParams
from app.services.fem1d import (
    Mesh1D,
    SingularSystemError,
    TridiagonalMatrix,
    assemble_load,
    assemble_mass,
    assemble_weighted_mass,
    at_gauss,
    element_gradients,
    kron_identity,
    solve_block_tridiagonal,
)
from app.services.model_core import InvalidParameterError, reaction, reaction_jacobian

logger = logging.getLogger(__name__)

DIRICHLET_VALUES = np.array([1.0, 0.0, 0.0])


class ForwardSolveError(Exception):
    """Base exception for forward solve failures"""
    pass


class NewtonConvergenceError(ForwardSolveError):
    """Raised when Newton does not reach the tolerance within max_iter"""

    def __init__(self, step: int, residual_norm: float, iterations: int):
        self.step = step
        self.residual_norm = residual_norm
        self.iterations = iterations
        super().__init__(
            f"Newton failed at time step {step} after {iterations} iterations "
            f"(residual {residual_norm:.3e})"
        )


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time levels t_n = n*tau, n = 0..nt"""
    tau: float
    T: float

    def __post_init__(self):
        if not (self.tau > 0 and self.T > 0):
            raise InvalidParameterError(f"tau and T must be positive, got tau={self.tau}, T={self.T}")
        nt = round(self.T / self.tau)
        if nt < 1 or abs(nt * self.tau - self.T) > 1e-12:
            raise InvalidParameterError(f"T={self.T} is not a whole number of steps tau={self.tau}")

    @property
    def nt(self) -> int:
        return round(self.T / self.tau)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.tau

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.nt + 1, self.tau)
        w[0] = w[-1] = 0.5 * self.tau
        return w


@dataclass(frozen=True)
class InitialCondition:
    """Nodal initial profiles of u1, u2, u3"""
    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray

    def stacked(self) -> np.ndarray:
        """Node-major array of shape (nod, 3)"""
        return np.stack([self.u1, self.u2, self.u3], axis=1).astype(float)

    def check(self, mesh: Mesh1D):
        for name in ("u1", "u2", "u3"):
            values = getattr(self, name)
            if values.shape != (mesh.nod,):
                raise InvalidParameterError(f"{name} has shape {values.shape}, expected ({mesh.nod},)")
            if not np.all(np.isfinite(values)):
                raise InvalidParameterError(f"{name} contains non-finite values")
        last = self.stacked()[-1]
        if not np.array_equal(last, DIRICHLET_VALUES):
            raise InvalidParameterError(f"Initial values at x=1 must be (1, 0, 0), got {tuple(last)}")


@dataclass(frozen=True)
class StateTrajectory:
    """Forward solution u[n, j, i] for time level n, node j, field i"""
    u: np.ndarray
    params: NondimParams
    mesh: Mesh1D
    time_grid: TimeGrid
    newton_history: List[List[float]] = field(default_factory=list)

    @property
    def u1(self) -> np.ndarray:
        return self.u[:, :, 0]

    @property
    def u2(self) -> np.ndarray:
        return self.u[:, :, 1]

    @property
    def u3(self) -> np.ndarray:
        return self.u[:, :, 2]

    def field(self, i: int) -> np.ndarray:
        """Field i in 1..3 as an array (nt+1, nod)"""
        return self.u[:, :, i - 1]

    @property
    def newton_iterations(self) -> int:
        return sum(len(history) - 1 for history in self.newton_history)


def default_initial_condition(mesh: Mesh1D, x0: float = 0.1) -> InitialCondition:
    """
    Tumor and acid concentrated at the left end, normal tissue elsewhere.

    u2 = u3 = exp(-(x/x0)^2), u1 = 1 - exp(-(x/x0)^2), with the node at x = 1
    set exactly to the Dirichlet values (1, 0, 0).
    """
    if not 0.0 < x0 < 1.0:
        raise InvalidParameterError(f"front width x0 must lie in (0, 1), got {x0}")
    g = np.exp(-(mesh.nodes / x0) ** 2)
    u1, u2, u3 = 1.0 - g, g.copy(), g.copy()
    u1[-1], u2[-1], u3[-1] = DIRICHLET_VALUES
    return InitialCondition(u1=u1, u2=u2, u3=u3)


def constant_initial_condition(mesh: Mesh1D, values=(1.0, 0.0, 0.0)) -> InitialCondition:
    u = np.tile(np.asarray(values, dtype=float), (mesh.nod, 1))
    return InitialCondition(u1=u[:, 0].copy(), u2=u[:, 1].copy(), u3=u[:, 2].copy())


def spatial_jacobian(
    U: np.ndarray, p: NondimParams, mesh: Mesh1D, diffusion: bool = True
) -> TridiagonalMatrix:
    """
    Derivative of the spatial operator S(U) = -(f(U), phi) + diffusion forms.

    Row i of block (j, k) is the derivative of the equation of field i tested
    with phi_j with respect to field k at node k. No Dirichlet rows are applied.
    """
    u_q = at_gauss(U)
    jac_q = reaction_jacobian(u_q[..., 0], u_q[..., 1], u_q[..., 2], p).entries
    s = assemble_weighted_mass(mesh, -jac_q)
    if not diffusion:
        return s

    h = mesh.h
    lower, main, upper = s.lower.copy(), s.main.copy(), s.upper.copy()
    # D2 (1 - u1) u2' phi_j' and u3' phi_j' with element-midpoint weights
    w2 = p.D2 * (1.0 - 0.5 * (U[:-1, 0] + U[1:, 0])) / h
    w3 = np.full(mesh.n_elements, 1.0 / h)
    for field_index, w in ((1, w2), (2, w3)):
        main[:-1, field_index, field_index] += w
        main[1:, field_index, field_index] += w
        upper[:-1, field_index, field_index] -= w
        lower[1:, field_index, field_index] -= w
    # Derivative of the weight (1 - u1) in the u2 equation: -D2/2 * u2' * (+-1)
    coupling = -0.5 * p.D2 * element_gradients(mesh, U[:, 1])
    # left node test function has phi' = -1/h, right node +1/h; times h
    main[:-1, 1, 0] -= coupling
    upper[:-1, 1, 0] -= coupling
    lower[1:, 1, 0] += coupling
    main[1:, 1, 0] += coupling
    return TridiagonalMatrix(lower, main, upper)


def spatial_residual(U: np.ndarray, p: NondimParams, mesh: Mesh1D, diffusion: bool = True) -> np.ndarray:
    """S(U) = -(f(U), phi_j) + D2((1-u1)u2', phi_j') e_2 + (u3', phi_j') e_3, shape (nod, 3)"""
    u_q = at_gauss(U)
    f = reaction(u_q[..., 0], u_q[..., 1], u_q[..., 2], p)
    r = -assemble_load(mesh, np.stack([f.f1, f.f2, f.f3], axis=-1))
    if diffusion:
        flux2 = p.D2 * (1.0 - 0.5 * (U[:-1, 0] + U[1:, 0])) * element_gradients(mesh, U[:, 1])
        flux3 = element_gradients(mesh, U[:, 2])
        for field_index, flux in ((1, flux2), (2, flux3)):
            r[:-1, field_index] -= flux
            r[1:, field_index] += flux
    return r


def step_residual(
    U: np.ndarray,
    U_prev: np.ndarray,
    p: NondimParams,
    mesh: Mesh1D,
    tau: float,
    diffusion: bool = True,
    dirichlet: bool = True,
    mass: Optional[TridiagonalMatrix] = None,
) -> Tuple[np.ndarray, TridiagonalMatrix]:
    """
    Residual and block Jacobian of one implicit Euler step.

    Args:
        U: Candidate state at level n, shape (nod, 3)
        U_prev: State at level n-1, shape (nod, 3)
        p: Model parameters
        mesh: Spatial mesh
        tau: Time step
        diffusion: Include the diffusion forms (False leaves pure reaction kinetics)
        dirichlet: Replace the x = 1 rows by identity rows
        mass: Pre-assembled scalar mass matrix

    Returns:
        (residual of shape (nod, 3), block TridiagonalMatrix Jacobian)
    """
    mass = assemble_mass(mesh) if mass is None else mass
    residual = mass.matvec(U - U_prev) + tau * spatial_residual(U, p, mesh, diffusion)
    s = spatial_jacobian(U, p, mesh, diffusion)
    m = kron_identity(mass)
    jac = TridiagonalMatrix(m.lower + tau * s.lower, m.main + tau * s.main, m.upper + tau * s.upper)
    if dirichlet:
        residual, jac = apply_dirichlet_rows(residual, jac, U[-1] - DIRICHLET_VALUES)
    return residual, jac


def apply_dirichlet_rows(residual: np.ndarray, jac: TridiagonalMatrix, value: np.ndarray):
    """Identity rows at x = 1 with the given residual there"""
    residual = residual.copy()
    residual[-1] = value
    lower, main = jac.lower.copy(), jac.main.copy()
    lower[-1] = 0.0
    main[-1] = np.eye(main.shape[1])
    return residual, TridiagonalMatrix(lower, main, jac.upper)


def solve_forward(
    p: NondimParams,
    ic: InitialCondition,
    mesh: Mesh1D,
    tg: TimeGrid,
    newton_opts: Optional[NewtonOptions] = None,
    diffusion: bool = True,
    dirichlet: bool = True,
) -> StateTrajectory:
    """
    Integrate the direct problem over the time grid.

    Each step starts Newton from the previous level and stops once the
    max-norm of the residual is below newton_opts.tol.

    Raises:
        InvalidParameterError: If the initial condition does not fit the mesh
        NewtonConvergenceError: If a step does not converge
        ForwardSolveError: If the Newton matrix is singular or the state blows up
    """
    opts = newton_opts or NewtonOptions()
    if dirichlet:
        ic.check(mesh)
    started = time.perf_counter()
    mass = assemble_mass(mesh)

    u = np.empty((tg.nt + 1, mesh.nod, 3))
    u[0] = ic.stacked()
    history: List[List[float]] = []

    for n in range(1, tg.nt + 1):
        U = u[n - 1].copy()
        norms: List[float] = []
        for iteration in range(opts.max_iter + 1):
            residual, jac = step_residual(U, u[n - 1], p, mesh, tg.tau, diffusion, dirichlet, mass)
            norm = float(np.max(np.abs(residual)))
            norms.append(norm)
            if not math.isfinite(norm):
                raise ForwardSolveError(f"Non-finite residual at time step {n}")
            if norm < opts.tol:
                break
            if iteration == opts.max_iter:
                raise NewtonConvergenceError(n, norm, iteration)
            try:
                U = U - solve_block_tridiagonal(jac, residual)
            except SingularSystemError as e:
                raise ForwardSolveError(f"Singular Newton matrix at time step {n}: {e}") from e
        logger.debug(f"step {n}: residuals {['%.2e' % r for r in norms]}")
        u[n] = U
        history.append(norms)

    trajectory = StateTrajectory(u=u, params=p, mesh=mesh, time_grid=tg, newton_history=history)
    logger.info(
        f"Forward solve delta1={p.delta1:.6g}: nod={mesh.nod}, nt={tg.nt}, "
        f"{trajectory.newton_iterations} Newton iterations, {time.perf_counter() - started:.2f}s"
    )
    return trajectory


def find_gap_intervals(traj: StateTrajectory, step: int = -1, threshold: float = 0.1) -> List[Tuple[float, float]]:
    """x-intervals (by node) where u1 and u2 are both below threshold at the given step"""
    low = (traj.u1[step] < threshold) & (traj.u2[step] < threshold)
    x = traj.mesh.nodes
    intervals = []
    start = None
    for j, flag in enumerate(low):
        if flag and start is None:
            start = j
        elif not flag and start is not None:
            intervals.append((float(x[start]), float(x[j - 1])))
            start = None
    if start is not None:
        intervals.append((float(x[start]), float(x[-1])))
    return intervals
