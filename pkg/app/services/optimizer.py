"""Bound-constrained scalar minimization of the reduced functional.

Projected secant-Newton: the second derivative is modelled by the secant of
successive adjoint gradients, the step is safeguarded to descent, trimmed by
Armijo backtracking and projected onto [lo, hi].
"""
import logging
import math
import time
from dataclasses import dataclass
from typing import List, Optional, Protocol, Tuple

from app.models import FitResult, NewtonOptions, NondimParams, OptimOptions, TraceEntry
from app.services.adjoint_solver import AdjointSolveError
from app.services.fem1d import Mesh1D
from app.services.forward_solver import ForwardSolveError, InitialCondition, TimeGrid
from app.services.model_core import InvalidParameterError
from app.services.objective import ReducedFunctional
from app.services.observations import ObservationSet

logger = logging.getLogger(__name__)

SOLVE_ERRORS = (ForwardSolveError, AdjointSolveError)


class FitError(Exception):
    """Raised when the fit cannot continue; carries the trace so far"""

    def __init__(self, message: str, trace: List[TraceEntry]):
        self.trace = trace
        super().__init__(message)


class ScalarObjective(Protocol):
    def value(self, delta1: float) -> float: ...

    def gradient(self, delta1: float) -> float: ...


@dataclass(frozen=True)
class SolverContext:
    """Everything but the data and delta1 needed to evaluate the reduced functional"""
    base_params: NondimParams
    ic: InitialCondition
    mesh: Mesh1D
    tg: TimeGrid
    newton_opts: Optional[NewtonOptions] = None

    def functional(self, obs: ObservationSet) -> ReducedFunctional:
        return ReducedFunctional(self.base_params, self.ic, self.mesh, self.tg, obs, self.newton_opts)


def project(delta1: float, bounds: Tuple[float, float]) -> float:
    lo, hi = bounds
    return min(hi, max(lo, delta1))


def projected_gradient(delta1: float, grad: float, bounds: Tuple[float, float]) -> float:
    """Gradient with the components pushing out of an active bound removed"""
    lo, hi = bounds
    if (delta1 <= lo and grad > 0) or (delta1 >= hi and grad < 0):
        return 0.0
    return grad


def _initial_curvature(functional: ScalarObjective, x: float, g: float, opts: OptimOptions) -> Optional[float]:
    lo, hi = opts.bounds
    offset = opts.curvature_offset * (hi - lo)
    x_near = x + offset if x + offset <= hi else x - offset
    try:
        g_near = functional.gradient(x_near)
    except SOLVE_ERRORS as e:
        logger.warning(f"Curvature gradient at delta1={x_near:.6g} failed: {e}")
        return None
    return (g_near - g) / (x_near - x)


def minimize(functional: ScalarObjective, delta1_0: float, opts: OptimOptions) -> FitResult:
    """
    Minimize a scalar objective with gradient over opts.bounds.

    Raises:
        InvalidParameterError: If delta1_0 lies outside the bounds
        FitError: If the objective cannot be evaluated at the start or at an accepted point,
            or if a line search ends without an accepted point after rejecting failed solves
    """
    lo, hi = opts.bounds
    if not lo <= delta1_0 <= hi:
        raise InvalidParameterError(f"delta1_0={delta1_0} outside bounds {opts.bounds}")

    trace: List[TraceEntry] = []
    x = float(delta1_0)
    try:
        J = functional.value(x)
        g = functional.gradient(x)
    except SOLVE_ERRORS as e:
        raise FitError(f"Cannot evaluate the functional at delta1_0={x}: {e}", trace) from e

    grad_tol = opts.grad_tol if opts.grad_tol is not None else 1e-8 * (1.0 + abs(J))
    curvature: Optional[float] = None
    termination = "max_iter"

    for k in range(opts.max_iter):
        trace.append(TraceEntry(iteration=k, delta1=x, J=J, grad=g))
        logger.debug(f"iter {k}: delta1={x:.10g} J={J:.6e} grad={g:.6e}")
        if abs(projected_gradient(x, g, opts.bounds)) < grad_tol:
            termination = "gradient"
            break

        if curvature is None:
            curvature = _initial_curvature(functional, x, g, opts)
        if curvature is not None and curvature > 0 and math.isfinite(curvature):
            direction = -g / curvature
        else:
            direction = -math.copysign(hi - lo, g)

        alpha = 1.0
        accepted = False
        step_too_small = False
        rejected = 0
        for _ in range(opts.max_backtracks):
            x_trial = project(x + alpha * direction, opts.bounds)
            s = x_trial - x
            if abs(s) < opts.step_tol:
                step_too_small = True
                break
            try:
                J_trial = functional.value(x_trial)
            except SOLVE_ERRORS as e:
                logger.warning(f"Rejected trial delta1={x_trial:.6g}: {e}")
                rejected += 1
                alpha *= 0.5
                continue
            if J_trial <= J + opts.c1 * g * s:
                accepted = True
                break
            alpha *= opts.backtrack

        if not accepted:
            if rejected:
                # the step shrank on failed solves, not on the objective
                raise FitError(
                    f"Solves keep failing beyond delta1={x:.10g} ({rejected} rejected trials, "
                    f"projected gradient {projected_gradient(x, g, opts.bounds):.3e})",
                    trace,
                )
            termination = "step" if step_too_small else "line_search"
            break

        try:
            g_trial = functional.gradient(x_trial)
        except SOLVE_ERRORS as e:
            raise FitError(f"Gradient failed at accepted delta1={x_trial}: {e}", trace) from e

        y = g_trial - g
        if s * y > 0:
            curvature = y / s
        x, J, g = x_trial, J_trial, g_trial

    return FitResult(
        delta1_star=x,
        J_star=J,
        grad_star=g,
        iterations=len(trace),
        trace=trace,
        converged=termination in ("gradient", "step"),
        termination=termination,
        bounds=opts.bounds,
        forward_solves=getattr(functional, "forward_solves", 0),
        adjoint_solves=getattr(functional, "adjoint_solves", 0),
    )


def fit(
    obs: ObservationSet,
    delta1_0: float,
    opts: Optional[OptimOptions] = None,
    context: Optional[SolverContext] = None,
) -> FitResult:
    """
    Recover delta1 from observations of the acid field.

    Args:
        obs: Observations on the solver grid
        delta1_0: Starting value inside opts.bounds
        opts: Optimizer options
        context: Model parameters (delta1 ignored), initial condition and grids

    Returns:
        FitResult with the iterate trace
    """
    if context is None:
        raise InvalidParameterError("fit requires a SolverContext")
    opts = opts or OptimOptions()
    started = time.perf_counter()
    result = minimize(context.functional(obs), delta1_0, opts)
    logger.info(
        f"Fit from delta1_0={delta1_0:.6g}: delta1*={result.delta1_star:.8g}, J*={result.J_star:.3e}, "
        f"{result.iterations} iterations ({result.termination}), {time.perf_counter() - started:.1f}s"
    )
    return result
