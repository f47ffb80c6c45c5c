import asyncio
import logging
from typing import Callable, TypeVar

from fastapi import APIRouter, HTTPException

from app.config import config
from app.models import (
    ErrorResponse,
    ExperimentConfig,
    FitRequest,
    FitResult,
    ForwardRequest,
    ForwardResponse,
    GradientRequest,
    GradientResponse,
    OptimOptions,
    ProblemSpec,
    SweepRequest,
    SweepResponse,
)
from app.services.adjoint_solver import AdjointSolveError
from app.services.cache_manager import cache_manager
from app.services.experiments import (
    build_context,
    generate_synthetic,
    gradient_check,
    run_functional_sweep,
    sweep_argmin,
)
from app.services.forward_solver import ForwardSolveError, find_gap_intervals, solve_forward
from app.services.optimizer import FitError, fit

logger = logging.getLogger(__name__)

router = APIRouter()

# Solves are CPU-bound; limit how many run at once
_semaphore = asyncio.Semaphore(config.MAX_CONCURRENT_SOLVES)

T = TypeVar("T")

SOLVER_RESPONSES = {
    400: {"model": ErrorResponse, "description": "Invalid parameters or grids"},
    422: {"model": ErrorResponse, "description": "Solver failure"},
    500: {"model": ErrorResponse, "description": "Internal server error"},
}


async def _solve(func: Callable[..., T], *args) -> T:
    """Run a solver call in a worker thread, mapping library errors to HTTP errors"""
    try:
        async with _semaphore:
            return await asyncio.to_thread(func, *args)

    except (ForwardSolveError, AdjointSolveError, FitError) as e:
        logger.warning(f"Solver failure: {e}")
        raise HTTPException(status_code=422, detail=str(e))

    except ValueError as e:
        # InvalidParameterError, GridMismatchError and pydantic validation
        logger.warning(f"Invalid request: {e}")
        raise HTTPException(status_code=400, detail=str(e))

    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        raise HTTPException(status_code=500, detail="Internal server error")


def _experiment(spec: ProblemSpec, **overrides) -> ExperimentConfig:
    return ExperimentConfig(**spec.model_dump(include=set(ProblemSpec.model_fields)), **overrides)


def _forward(req: ForwardRequest) -> ForwardResponse:
    context = build_context(req)
    traj = solve_forward(req.params(req.delta1), context.ic, context.mesh, context.tg)
    return ForwardResponse(
        delta1=req.delta1,
        t=float(context.tg.times[-1]),
        x=context.mesh.nodes.tolist(),
        u1=traj.u1[-1].tolist(),
        u2=traj.u2[-1].tolist(),
        u3=traj.u3[-1].tolist(),
        gap_intervals=find_gap_intervals(traj, -1, req.gap_threshold),
        newton_iterations=traj.newton_iterations,
    )


def _gradient(req: GradientRequest) -> GradientResponse:
    cfg = _experiment(req, delta1_hat=req.delta1_hat)
    if req.finite_difference:
        row = gradient_check(cfg, req.delta1)
        return GradientResponse(J=row.J, grad_adjoint=row.grad_adjoint, grad_fd=row.grad_fd, rel_error=row.rel_error)
    functional = build_context(cfg).functional(generate_synthetic(cfg, 0.0, cache=cache_manager))
    J, grad = functional.value_and_gradient(req.delta1)
    return GradientResponse(J=J, grad_adjoint=grad)


def _fit(req: FitRequest) -> FitResult:
    cfg = _experiment(req, delta1_hat=req.delta1_hat, seed=req.seed, delta1_init=req.delta1_init)
    obs = generate_synthetic(cfg, req.sigma, cache=cache_manager)
    return fit(obs, req.delta1_init, OptimOptions(bounds=cfg.bounds), build_context(cfg))


def _sweep(req: SweepRequest) -> SweepResponse:
    cfg = _experiment(req, delta1_hat=req.delta1_hat)
    curve = run_functional_sweep(cfg, req.lo, req.hi, req.samples, cache=cache_manager)
    return SweepResponse(samples=curve, argmin=sweep_argmin(curve))


@router.post("/forward", response_model=ForwardResponse, responses=SOLVER_RESPONSES)
async def forward(req: ForwardRequest) -> ForwardResponse:
    """Solve the direct problem and return the final-time profiles"""
    return await _solve(_forward, req)


@router.post("/gradient", response_model=GradientResponse, responses=SOLVER_RESPONSES)
async def gradient(req: GradientRequest) -> GradientResponse:
    """
    Misfit and adjoint gradient at delta1 against noiseless data from delta1_hat.

    With finite_difference set, the central-difference gradient and the
    relative discrepancy are returned too.
    """
    return await _solve(_gradient, req)


@router.post("/fit", response_model=FitResult, responses=SOLVER_RESPONSES)
async def fit_delta1(req: FitRequest) -> FitResult:
    """Recover delta1 from synthetic data, optionally perturbed by Gaussian noise"""
    return await _solve(_fit, req)


@router.post("/sweep", response_model=SweepResponse, responses=SOLVER_RESPONSES)
async def sweep(req: SweepRequest) -> SweepResponse:
    """Sample the reduced functional on an equispaced grid"""
    return await _solve(_sweep, req)
