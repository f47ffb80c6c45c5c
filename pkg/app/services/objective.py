"""Misfit functional, its adjoint gradient and a finite-difference oracle.

    J = 1/2 * sum_n w_n (u3^n - uhat3^n)^T M (u3^n - uhat3^n)
    J'(delta1) = tau * sum_{n>=1} integral of u1^n u3^n lambda1^{n-1} dx

with trapezoid weights w_n in time and the FEM mass matrix / 3-point Gauss
rule in space. lambda is the discrete adjoint of the implicit Euler scheme,
stored one level behind the state it pairs with, so J' is the exact
derivative of the discrete J up to the solver tolerances. J has no
explicit delta1 term, so the gradient is the action of the parameter
derivative of the constraint on the adjoint alone.
"""
import logging
from typing import Callable, Optional, Tuple, Union

import numpy as np

from app.models import NewtonOptions, NondimParams
from app.services.adjoint_solver import AdjointTrajectory, solve_adjoint
from app.services.fem1d import GAUSS_WEIGHTS, Mesh1D, assemble_mass, at_gauss
from app.services.forward_solver import InitialCondition, StateTrajectory, TimeGrid, solve_forward
from app.services.model_core import InvalidParameterError
from app.services.observations import ObservationSet, check_same_grid

logger = logging.getLogger(__name__)


def objective(traj: StateTrajectory, obs: ObservationSet, mesh: Mesh1D, tg: TimeGrid) -> float:
    """Data misfit of the acid field; zero iff u3 equals uhat3 at every node and level"""
    check_same_grid(mesh, tg, traj.mesh, traj.time_grid, "trajectory")
    check_same_grid(mesh, tg, obs.mesh, obs.time_grid, "observations")
    d = (traj.u3 - obs.uhat3).T
    md = assemble_mass(mesh).matvec(d)
    per_level = np.sum(d * md, axis=0)
    return 0.5 * float(tg.trapezoid_weights() @ per_level)


def gradient_adjoint(traj: StateTrajectory, adj: AdjointTrajectory, mesh: Mesh1D, tg: TimeGrid) -> float:
    """dJ/d delta1 as the space-time sum of u1 * u3 at level n times lambda1 at level n-1"""
    check_same_grid(mesh, tg, traj.mesh, traj.time_grid, "trajectory")
    check_same_grid(mesh, tg, adj.mesh, adj.time_grid, "adjoint")
    integrand = at_gauss(traj.u1[1:].T) * at_gauss(traj.u3[1:].T) * at_gauss(adj.lambda1[:-1].T)
    per_level = mesh.h * np.einsum("eqn,q->n", integrand, GAUSS_WEIGHTS)
    return tg.tau * float(np.sum(per_level))


class ReducedFunctional:
    """
    J~(delta1) = J(u(delta1)) for fixed data, model parameters and grids.

    The most recent forward trajectory is kept, so a gradient requested at
    the point of the last value evaluation costs one adjoint solve only.
    """

    def __init__(
        self,
        base_params: NondimParams,
        ic: InitialCondition,
        mesh: Mesh1D,
        tg: TimeGrid,
        obs: ObservationSet,
        newton_opts: Optional[NewtonOptions] = None,
    ):
        check_same_grid(mesh, tg, obs.mesh, obs.time_grid, "observations")
        self.base_params = base_params
        self.ic = ic
        self.mesh = mesh
        self.tg = tg
        self.obs = obs
        self.newton_opts = newton_opts or NewtonOptions()
        self.forward_solves = 0
        self.adjoint_solves = 0
        self._last: Optional[Tuple[float, StateTrajectory]] = None

    def trajectory(self, delta1: float) -> StateTrajectory:
        if self._last is not None and self._last[0] == delta1:
            return self._last[1]
        traj = solve_forward(self.base_params.with_delta1(delta1), self.ic, self.mesh, self.tg, self.newton_opts)
        self.forward_solves += 1
        self._last = (delta1, traj)
        return traj

    def value(self, delta1: float) -> float:
        return objective(self.trajectory(delta1), self.obs, self.mesh, self.tg)

    __call__ = value

    def gradient(self, delta1: float) -> float:
        traj = self.trajectory(delta1)
        adj = solve_adjoint(traj.params, traj, self.obs, self.mesh, self.tg)
        self.adjoint_solves += 1
        return gradient_adjoint(traj, adj, self.mesh, self.tg)

    def value_and_gradient(self, delta1: float) -> Tuple[float, float]:
        return self.value(delta1), self.gradient(delta1)


def default_fd_step(delta1: float) -> float:
    return 1e-4 * max(1.0, abs(delta1))


def gradient_fd(
    delta1: float,
    functional: Union[ReducedFunctional, Callable[[float], float]],
    step: Optional[float] = None,
    bounds: Optional[Tuple[float, float]] = None,
) -> float:
    """
    Central difference (J(delta1 + s) - J(delta1 - s)) / (2 s).

    Args:
        delta1: Evaluation point
        functional: Any callable J(delta1), typically a ReducedFunctional
        step: Difference step (default 1e-4 * max(1, |delta1|))
        bounds: Admissible interval both evaluation points must lie in

    Raises:
        InvalidParameterError: If delta1 +- step leaves the bounds
        ForwardSolveError: Propagated from the forward solves
    """
    s = default_fd_step(delta1) if step is None else step
    if s <= 0:
        raise InvalidParameterError(f"finite-difference step must be positive, got {s}")
    if bounds is not None and not (bounds[0] <= delta1 - s and delta1 + s <= bounds[1]):
        raise InvalidParameterError(f"delta1 +- {s:.3g} leaves the admissible interval {bounds}")
    j_plus = functional(delta1 + s)
    j_minus = functional(delta1 - s)
    return (j_plus - j_minus) / (2.0 * s)


def taylor_remainders(functional: ReducedFunctional, delta1: float, step: float, levels: int = 3):
    """|J(delta1 + s) - J(delta1) - s J'(delta1)| for s = step, step/2, ..."""
    j0, g0 = functional.value_and_gradient(delta1)
    rows = []
    for k in range(levels):
        s = step / 2 ** k
        rows.append((s, abs(functional.value(delta1 + s) - j0 - s * g0)))
    return rows
