"""Synthetic data and the studies built on it.

Randomness is derived from one seed with a counter scheme: the stream of
(study row r, trial k, purpose s) is Philox keyed by
SeedSequence(entropy=seed, spawn_key=(r, k, s)), with s = 0 for observation
noise and s = 1 for random starting values. Any trial can be re-run alone.
Gaussian samples come from the Box-Muller transform of those uniforms.
"""
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from app.config import config
from app.models import (
    ExperimentConfig,
    NewtonOptions,
    OptimOptions,
    ProblemSpec,
    RecoveryRow,
    RefinementRow,
    StudyRow,
    SweepSample,
)
from app.services.adjoint_solver import AdjointSolveError
from app.services.cache_manager import CacheManager
from app.services.fem1d import Mesh1D
from app.services.forward_solver import ForwardSolveError, TimeGrid, default_initial_condition, solve_forward
from app.services.model_core import InvalidParameterError
from app.services.objective import gradient_fd
from app.services.observations import ObservationSet
from app.services.optimizer import FitError, SolverContext, fit

logger = logging.getLogger(__name__)

RECOVERY_TARGETS = (0.5, 4.0, 12.5, 16.0)
DEFAULT_REFINEMENT_LADDER = ((201, 0.5), (401, 0.25), (801, 0.125))
FAILURE_FLAG_FRACTION = 0.1

STREAM_NOISE = 0
STREAM_START = 1


def build_mesh(spec: ProblemSpec) -> Mesh1D:
    return Mesh1D(spec.nod)


def build_time_grid(spec: ProblemSpec) -> TimeGrid:
    return TimeGrid(spec.tau, spec.t_final)


def build_context(spec: ProblemSpec, newton_opts: Optional[NewtonOptions] = None) -> SolverContext:
    mesh = build_mesh(spec)
    return SolverContext(
        base_params=spec.params(0.0),
        ic=default_initial_condition(mesh, spec.front_width),
        mesh=mesh,
        tg=build_time_grid(spec),
        newton_opts=newton_opts,
    )


def trial_generator(seed: int, row: int, trial: int, stream: int = STREAM_NOISE) -> np.random.Generator:
    """Independent, reproducible generator for one (row, trial, stream) triple"""
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(row, trial, stream))
    return np.random.Generator(np.random.Philox(sequence))


def gaussian_noise(gen: np.random.Generator, shape: Tuple[int, ...], sigma: float) -> np.ndarray:
    """N(0, sigma^2) samples by Box-Muller on the generator's uniforms"""
    n = int(np.prod(shape))
    pairs = (n + 1) // 2
    u1 = 1.0 - gen.random(pairs)  # (0, 1], keeps the log finite
    u2 = gen.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:n]
    return sigma * z.reshape(shape)


def _synthetic_key(spec: ProblemSpec, delta1_hat: float) -> str:
    generator = spec.model_dump(include=set(ProblemSpec.model_fields))
    generator.update(delta1_hat=delta1_hat, newton_tol=config.NEWTON_TOL)
    return CacheManager.make_key(generator)


def noiseless_u3(spec: ProblemSpec, delta1_hat: float, cache: Optional[CacheManager] = None) -> np.ndarray:
    """Acid field of the forward solution at delta1_hat, shape (nt+1, nod)"""
    key = _synthetic_key(spec, delta1_hat)
    if cache is not None:
        cached = cache.get(key)
        if cached is not None and cached.shape == (build_time_grid(spec).nt + 1, spec.nod):
            return cached
    context = build_context(spec)
    traj = solve_forward(spec.params(delta1_hat), context.ic, context.mesh, context.tg, context.newton_opts)
    u3 = np.ascontiguousarray(traj.u3)
    if cache is not None:
        cache.set(key, u3)
    return u3


def add_noise(clean_u3: np.ndarray, sigma: float, seed: int, row: int, trial: int) -> np.ndarray:
    """Perturb every level and every node except the Dirichlet node at x = 1"""
    if sigma == 0:
        return clean_u3.copy()
    noisy = clean_u3.copy()
    gen = trial_generator(seed, row, trial, STREAM_NOISE)
    noisy[:, :-1] += gaussian_noise(gen, noisy[:, :-1].shape, sigma)
    return noisy


def generate_synthetic(
    cfg: ExperimentConfig,
    sigma: float = 0.0,
    row: int = 0,
    trial: int = 0,
    cache: Optional[CacheManager] = None,
) -> ObservationSet:
    """
    Observations of u3 from a forward solve at cfg.delta1_hat.

    With sigma = 0 the data equal the forward u3 bitwise. Noise is not
    clipped, so negative observations are possible.

    Raises:
        InvalidParameterError: If sigma is negative
        ForwardSolveError: Propagated from the forward solve
    """
    if sigma < 0:
        raise InvalidParameterError(f"sigma must be nonnegative, got {sigma}")
    clean = noiseless_u3(cfg, cfg.delta1_hat, cache)
    return ObservationSet(
        uhat3=add_noise(clean, sigma, cfg.seed, row, trial),
        mesh=build_mesh(cfg),
        time_grid=build_time_grid(cfg),
        sigma=sigma,
        seed=cfg.seed,
    )


@dataclass(frozen=True)
class TrialTask:
    """Everything one fit needs; picklable for worker processes"""
    cfg: ExperimentConfig
    clean_u3: np.ndarray
    sigma: float
    row: int
    trial: int


def starting_value(cfg: ExperimentConfig, row: int, trial: int) -> float:
    """Fixed cfg.delta1_init, or uniform in the bounds from the trial's own stream"""
    if cfg.delta1_init is not None:
        return cfg.delta1_init
    lo, hi = cfg.bounds
    return lo + (hi - lo) * float(trial_generator(cfg.seed, row, trial, STREAM_START).random())


def run_trial(task: TrialTask) -> Optional[float]:
    """Recovered delta1 of one trial, None if the fit failed or did not converge"""
    cfg = task.cfg
    obs = ObservationSet(
        uhat3=add_noise(task.clean_u3, task.sigma, cfg.seed, task.row, task.trial),
        mesh=build_mesh(cfg),
        time_grid=build_time_grid(cfg),
        sigma=task.sigma,
        seed=cfg.seed,
    )
    delta1_0 = starting_value(cfg, task.row, task.trial)
    try:
        result = fit(obs, delta1_0, OptimOptions(bounds=cfg.bounds), build_context(cfg))
    except (ForwardSolveError, AdjointSolveError, FitError, InvalidParameterError) as e:
        logger.warning(f"Trial {task.row}/{task.trial} (sigma={task.sigma}) failed: {e}")
        return None
    if not result.converged:
        logger.warning(f"Trial {task.row}/{task.trial} (sigma={task.sigma}) stopped: {result.termination}")
        return None
    return result.delta1_star


def _map_trials(tasks: Sequence[TrialTask], max_workers: Optional[int]) -> List[Optional[float]]:
    """Results in task order whatever the completion order"""
    workers = config.MAX_WORKERS if max_workers is None else max_workers
    if workers <= 1 or len(tasks) <= 1:
        return [run_trial(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(run_trial, tasks))


def sample_statistics(values: Sequence[float]) -> Tuple[Optional[float], Optional[float]]:
    """Mean and sample standard deviation (n - 1 denominator, 0 for one value)"""
    if not values:
        return None, None
    data = np.asarray(values, dtype=float)
    mean = float(np.mean(data))
    std = float(np.std(data, ddof=1)) if data.size > 1 else 0.0
    return mean, std


def run_noise_study(
    cfg: ExperimentConfig,
    cache: Optional[CacheManager] = None,
    max_workers: Optional[int] = None,
) -> List[StudyRow]:
    """One row per sigma in cfg.sigmas, each from cfg.trials independent noisy fits"""
    started = time.perf_counter()
    logger.info(
        f"Noise study delta1_hat={cfg.delta1_hat}, sigmas={cfg.sigmas}, trials={cfg.trials}, "
        f"nod={cfg.nod}, tau={cfg.tau}, seed={cfg.seed}"
    )
    clean = noiseless_u3(cfg, cfg.delta1_hat, cache)
    rows = []
    for row, sigma in enumerate(cfg.sigmas):
        tasks = [TrialTask(cfg, clean, sigma, row, k) for k in range(cfg.trials)]
        results = _map_trials(tasks, max_workers)
        values = [v for v in results if v is not None]
        failures = len(results) - len(values)
        mean, std = sample_statistics(values)
        rel_error = None if mean is None else abs(cfg.delta1_hat - mean) / cfg.delta1_hat
        flagged = failures > FAILURE_FLAG_FRACTION * cfg.trials
        if flagged:
            logger.warning(f"sigma={sigma}: {failures} of {cfg.trials} trials failed")
        rows.append(StudyRow(
            sigma=sigma, mean=mean, std=std, rel_error=rel_error,
            trials=cfg.trials, failures=failures, flagged=flagged,
        ))
        logger.info(f"sigma={sigma}: mean={mean}, S={std}, e={rel_error}")
    logger.info(f"Noise study finished in {time.perf_counter() - started:.1f}s")
    return rows


def run_recovery_study(
    cfg: ExperimentConfig,
    targets: Iterable[float] = RECOVERY_TARGETS,
    cache: Optional[CacheManager] = None,
    max_workers: Optional[int] = None,
) -> List[RecoveryRow]:
    """
    Noiseless fits from uniformly random starts, one row per target delta1_hat.

    cfg.delta1_init is honoured when set, which allows fixed-start runs.
    """
    started = time.perf_counter()
    rows = []
    for row, target in enumerate(targets):
        target_cfg = cfg.model_copy(update={"delta1_hat": target})
        clean = noiseless_u3(target_cfg, target, cache)
        tasks = [TrialTask(target_cfg, clean, 0.0, row, k) for k in range(cfg.trials)]
        results = _map_trials(tasks, max_workers)
        values = [v for v in results if v is not None]
        mean, std = sample_statistics(values)
        rows.append(RecoveryRow(
            delta1_hat=target, mean=mean, std=std,
            trials=cfg.trials, failures=len(results) - len(values),
        ))
        logger.info(f"delta1_hat={target}: mean={mean}, S={std}, failures={len(results) - len(values)}")
    logger.info(f"Recovery study finished in {time.perf_counter() - started:.1f}s")
    return rows


def run_functional_sweep(
    cfg: ExperimentConfig,
    lo: float,
    hi: float,
    samples: int = 41,
    obs: Optional[ObservationSet] = None,
    cache: Optional[CacheManager] = None,
) -> List[SweepSample]:
    """
    Reduced functional on an equispaced grid of delta1 values.

    Raises:
        InvalidParameterError: If [lo, hi] leaves the admissible bounds
        ForwardSolveError: Naming the delta1 whose forward solve failed
    """
    b_lo, b_hi = cfg.bounds
    if not (b_lo <= lo < hi <= b_hi) or samples < 2:
        raise InvalidParameterError(f"sweep [{lo}, {hi}] x {samples} not within bounds {cfg.bounds}")
    obs = obs or generate_synthetic(cfg, 0.0, cache=cache)
    functional = build_context(cfg).functional(obs)
    curve = []
    for delta1 in np.linspace(lo, hi, samples):
        try:
            curve.append(SweepSample(delta1=float(delta1), J=functional.value(float(delta1))))
        except ForwardSolveError as e:
            raise ForwardSolveError(f"Sweep failed at delta1={delta1:.6g}: {e}") from e
    return curve


def sweep_argmin(curve: Sequence[SweepSample]) -> float:
    return min(curve, key=lambda s: s.J).delta1


def gradient_check(
    cfg: ExperimentConfig,
    delta1: float,
    step: Optional[float] = None,
    obs: Optional[ObservationSet] = None,
) -> RefinementRow:
    """Adjoint and central-difference gradient at delta1, by default against noiseless data"""
    obs = obs or generate_synthetic(cfg, 0.0)
    functional = build_context(cfg).functional(obs)
    J, grad_adjoint = functional.value_and_gradient(delta1)
    grad_fd = gradient_fd(delta1, functional, step, cfg.bounds)
    rel_error = abs(grad_adjoint - grad_fd) / max(abs(grad_fd), np.finfo(float).tiny)
    return RefinementRow(
        nod=cfg.nod, tau=cfg.tau, delta1=delta1, J=J,
        grad_adjoint=grad_adjoint, grad_fd=grad_fd, rel_error=rel_error,
    )


def run_gradient_refinement(
    cfg: ExperimentConfig,
    ladder: Sequence[Tuple[int, float]] = DEFAULT_REFINEMENT_LADDER,
    delta1: float = 8.0,
) -> List[RefinementRow]:
    """Gradient check on successively refined (nod, tau) levels"""
    rows = []
    for nod, tau in ladder:
        row = gradient_check(cfg.model_copy(update={"nod": nod, "tau": tau}), delta1)
        logger.info(
            f"nod={nod}, tau={tau}: adjoint={row.grad_adjoint:.8e}, fd={row.grad_fd:.8e}, "
            f"rel={row.rel_error:.3e}"
        )
        rows.append(row)
    return rows
