"""Command-line interface: forward and adjoint solves, gradient checks, fits and studies.

    python -m app.cli forward --delta1 12.5 --out traj.csv
    python -m app.cli noise-study --delta1-hat 4 --sigma 0.1 --trials 30 --out noise.csv

Settings come from the environment defaults, then a `--config` file of
`key = value` lines, then the flags; later sources win.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

from app.config import config
from app.models import DimensionalParams, ExperimentConfig, OptimOptions
from app.parsers.config_file import load_config_file
from app.parsers.csv_io import (
    read_observations_csv,
    write_adjoint_csv,
    write_estimate_csv,
    write_recovery_csv,
    write_refinement_csv,
    write_study_csv,
    write_sweep_csv,
    write_trace_csv,
    write_trajectory_csv,
)
from app.services.adjoint_solver import AdjointSolveError, solve_adjoint
from app.services.cache_manager import CacheManager
from app.services.error_estimator import estimate_aposteriori
from app.services.experiments import (
    DEFAULT_REFINEMENT_LADDER,
    RECOVERY_TARGETS,
    build_context,
    build_mesh,
    build_time_grid,
    generate_synthetic,
    gradient_check,
    run_functional_sweep,
    run_gradient_refinement,
    run_noise_study,
    run_recovery_study,
    sweep_argmin,
)
from app.services.forward_solver import ForwardSolveError, find_gap_intervals, solve_forward
from app.services.model_core import nondimensionalize
from app.services.objective import default_fd_step, taylor_remainders
from app.services.observations import ObservationSet
from app.services.optimizer import FitError, fit

logger = logging.getLogger(__name__)

DEFAULT_DELTA1 = 8.0
DEFAULT_RECOVERY_TRIALS = 10
LIBRARY_ERRORS = (ValueError, OSError, ForwardSolveError, AdjointSolveError, FitError)


def _float_list(text: str) -> List[float]:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _bounds(text: str) -> Tuple[float, float]:
    values = _float_list(text)
    if len(values) != 2:
        raise ValueError(f"bounds must be 'lo,hi', got {text!r}")
    return values[0], values[1]


def _start_value(text: str) -> Union[float, str]:
    """A fixed starting value, or "random" for uniform draws in the bounds"""
    return "random" if str(text).strip().lower() == "random" else float(text)


# Keys accepted in config files and their converters; flags use the same names
SETTING_TYPES: Dict[str, Callable[[str], Any]] = {
    "nod": int,
    "tau": float,
    "t_final": float,
    "front_width": float,
    "delta1": float,
    "rho2": float,
    "d2": float,
    "delta3": float,
    "seed": int,
    "out": str,
    "delta1_hat": float,
    "sigma": _float_list,
    "trials": int,
    "delta1_init": _start_value,
    "bounds": _bounds,
    "obs": str,
    "samples": int,
}


def _add_shared(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="File of key = value settings")
    p.add_argument("--nod", type=int, help="Number of mesh nodes on [0, 1]")
    p.add_argument("--tau", type=float, help="Time step")
    p.add_argument("--t-final", type=float, help="Final time T")
    p.add_argument("--front-width", type=float, help="Width x0 of the initial tumor front")
    p.add_argument("--delta1", type=float, help=f"delta1 to evaluate at (default {DEFAULT_DELTA1})")
    p.add_argument("--rho2", type=float)
    p.add_argument("--d2", type=float)
    p.add_argument("--delta3", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=str, help="Output CSV path")


def _add_study(p: argparse.ArgumentParser):
    p.add_argument("--delta1-hat", type=float, help="delta1 generating the synthetic data")
    p.add_argument("--sigma", type=float, action="append", help="Noise level (repeatable)")
    p.add_argument("--trials", type=int)
    p.add_argument("--delta1-init", type=_start_value, help="Starting value or 'random'")
    p.add_argument("--bounds", type=_bounds, help="Admissible interval lo,hi")
    p.add_argument("--obs", type=str, help="Observation CSV (x,t,u3hat) instead of synthetic data")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="python -m app.cli", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    commands = {
        "forward": "Solve the direct problem",
        "adjoint": "Solve the direct and adjoint problems against data",
        "gradcheck": "Compare the adjoint gradient with finite differences",
        "fit": "Recover delta1 from data",
        "sweep": "Sample the reduced functional over delta1",
        "noise-study": "Repeated fits on noisy synthetic data",
        "recovery-study": "Noiseless fits from random starting values",
        "error-estimate": "A posteriori error indicators of a forward solve",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        _add_shared(p)
        _add_study(p)
        if name == "gradcheck":
            p.add_argument("--refine", action="store_true", help="Run on the refinement ladder")
            p.add_argument("--step", type=float, help="Finite-difference step")
        if name == "sweep":
            p.add_argument("--samples", type=int, help="Number of delta1 samples (default 41)")
        if name in ("noise-study", "recovery-study"):
            p.add_argument("--workers", type=int, help="Worker processes (default MAX_WORKERS)")
            p.add_argument("--no-cache", action="store_true", help="Do not use the synthetic-data cache")
        if name == "recovery-study":
            p.add_argument("--targets", type=_float_list, help="delta1_hat values, comma-separated")

    nondim = sub.add_parser("nondim", help="Dimensionless groups of dimensional constants")
    reference = DimensionalParams.reference(d1=1.0)
    nondim.add_argument("--d1", type=float, required=True, help="Acid-induced death rate")
    for field in ("K1", "K2", "r1", "r2", "D_N2", "D_N3", "r3", "d3"):
        nondim.add_argument(f"--{field}", type=float, default=getattr(reference, field))
    return parser


def resolve_settings(args: argparse.Namespace) -> Dict[str, Any]:
    """Config-file settings overridden by the flags that were given"""
    settings: Dict[str, Any] = {}
    if getattr(args, "config", None):
        for key, raw in load_config_file(args.config).items():
            if key not in SETTING_TYPES:
                raise ValueError(f"Unknown setting in {args.config}: {key}")
            settings[key] = SETTING_TYPES[key](raw)
    for key in SETTING_TYPES:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def experiment_config(settings: Dict[str, Any], **defaults) -> ExperimentConfig:
    fields = {
        "nod": settings.get("nod"),
        "tau": settings.get("tau"),
        "t_final": settings.get("t_final"),
        "front_width": settings.get("front_width"),
        "rho2": settings.get("rho2"),
        "D2": settings.get("d2"),
        "delta3": settings.get("delta3"),
        "seed": settings.get("seed"),
        "delta1_hat": settings.get("delta1_hat"),
        "sigmas": settings.get("sigma"),
        "trials": settings.get("trials"),
        "bounds": settings.get("bounds"),
        "out": settings.get("out"),
    }
    fields = {k: v for k, v in fields.items() if v is not None}
    if "delta1_init" in settings:
        start = settings["delta1_init"]
        fields["delta1_init"] = None if start == "random" else start
    for key, value in defaults.items():
        fields.setdefault(key, value)
    return ExperimentConfig(**fields)


def _observations(cfg: ExperimentConfig, settings: Dict[str, Any], sigma: float = 0.0) -> ObservationSet:
    if settings.get("obs"):
        return read_observations_csv(Path(settings["obs"]), build_mesh(cfg), build_time_grid(cfg))
    return generate_synthetic(cfg, sigma)


def _metadata(cfg: ExperimentConfig, **extra) -> Dict[str, Any]:
    meta = {
        "seed": cfg.seed, "nod": cfg.nod, "tau": cfg.tau, "t_final": cfg.t_final,
        "rho2": cfg.rho2, "D2": cfg.D2, "delta3": cfg.delta3, "front_width": cfg.front_width,
        "delta1_hat": cfg.delta1_hat, "trials": cfg.trials,
        "delta1_init": "random" if cfg.delta1_init is None else cfg.delta1_init,
        "bounds": cfg.bounds,
    }
    meta.update(extra)
    return meta


def _cache(args: argparse.Namespace) -> Optional[CacheManager]:
    if getattr(args, "no_cache", False) or not config.CACHE_ENABLED:
        return None
    return CacheManager(config.CACHE_DIR)


def cmd_forward(args, settings) -> int:
    cfg = experiment_config(settings)
    delta1 = settings.get("delta1", DEFAULT_DELTA1)
    context = build_context(cfg)
    traj = solve_forward(cfg.params(delta1), context.ic, context.mesh, context.tg)
    print(f"delta1={delta1} nod={cfg.nod} nt={context.tg.nt} newton_iterations={traj.newton_iterations}")
    print(f"gap intervals at t={context.tg.T}: {find_gap_intervals(traj)}")
    if cfg.out:
        write_trajectory_csv(Path(cfg.out), traj)
    return 0


def cmd_adjoint(args, settings) -> int:
    cfg = experiment_config(settings)
    delta1 = settings.get("delta1", DEFAULT_DELTA1)
    context = build_context(cfg)
    obs = _observations(cfg, settings)
    params = cfg.params(delta1)
    traj = solve_forward(params, context.ic, context.mesh, context.tg)
    adj = solve_adjoint(params, traj, obs, context.mesh, context.tg)
    print(f"delta1={delta1} max|lambda|={abs(adj.lam).max():.6e}")
    if cfg.out:
        write_adjoint_csv(Path(cfg.out), adj)
    return 0


def cmd_gradcheck(args, settings) -> int:
    cfg = experiment_config(settings)
    delta1 = settings.get("delta1", DEFAULT_DELTA1)
    if args.refine:
        rows = run_gradient_refinement(cfg, DEFAULT_REFINEMENT_LADDER, delta1)
    else:
        obs = _observations(cfg, settings)
        rows = [gradient_check(cfg, delta1, args.step, obs)]
    for row in rows:
        print(
            f"nod={row.nod} tau={row.tau} J={row.J:.10e} adjoint={row.grad_adjoint:.10e} "
            f"fd={row.grad_fd:.10e} rel_error={row.rel_error:.3e}"
        )
    if not args.refine:
        functional = build_context(cfg).functional(obs)
        step = args.step or default_fd_step(delta1) * 100
        for s, remainder in taylor_remainders(functional, delta1, step):
            print(f"taylor s={s:.3e} remainder={remainder:.6e}")
    if cfg.out:
        write_refinement_csv(Path(cfg.out), rows, _metadata(cfg, delta1=delta1))
    return 0


def cmd_fit(args, settings) -> int:
    cfg = experiment_config(settings)
    sigma = cfg.sigmas[0] if settings.get("sigma") else 0.0
    obs = _observations(cfg, settings, sigma)
    delta1_0 = cfg.delta1_init if cfg.delta1_init is not None else DEFAULT_DELTA1
    result = fit(obs, delta1_0, OptimOptions(bounds=cfg.bounds), build_context(cfg))
    print(
        f"delta1*={result.delta1_star!r} J*={result.J_star:.6e} grad*={result.grad_star:.3e} "
        f"iterations={result.iterations} termination={result.termination} "
        f"forward_solves={result.forward_solves} adjoint_solves={result.adjoint_solves}"
    )
    if cfg.out:
        write_trace_csv(Path(cfg.out), result.trace)
    return 0 if result.converged else 2


def cmd_sweep(args, settings) -> int:
    cfg = experiment_config(settings)
    lo, hi = cfg.bounds
    obs = _observations(cfg, settings)
    curve = run_functional_sweep(cfg, lo, hi, settings.get("samples", 41), obs=obs)
    for sample in curve:
        print(f"{sample.delta1!r},{sample.J!r}")
    print(f"argmin={sweep_argmin(curve)!r}")
    if cfg.out:
        write_sweep_csv(Path(cfg.out), curve, _metadata(cfg))
    return 0


def cmd_noise_study(args, settings) -> int:
    cfg = experiment_config(settings)
    rows = run_noise_study(cfg, cache=_cache(args), max_workers=args.workers)
    for r in rows:
        flag = " (flagged)" if r.flagged else ""
        print(f"sigma={r.sigma} mean={r.mean} std={r.std} rel_error={r.rel_error} failures={r.failures}{flag}")
    if cfg.out:
        write_study_csv(Path(cfg.out), rows, _metadata(cfg))
    return 0


def cmd_recovery_study(args, settings) -> int:
    settings.setdefault("delta1_init", "random")
    cfg = experiment_config(settings, trials=DEFAULT_RECOVERY_TRIALS)
    targets = args.targets or RECOVERY_TARGETS
    rows = run_recovery_study(cfg, targets, cache=_cache(args), max_workers=args.workers)
    for r in rows:
        print(f"delta1_hat={r.delta1_hat} mean={r.mean} std={r.std} failures={r.failures}")
    if cfg.out:
        write_recovery_csv(Path(cfg.out), rows, _metadata(cfg, targets=list(targets)))
    return 0


def cmd_error_estimate(args, settings) -> int:
    cfg = experiment_config(settings)
    delta1 = settings.get("delta1", DEFAULT_DELTA1)
    context = build_context(cfg)
    params = cfg.params(delta1)
    traj = solve_forward(params, context.ic, context.mesh, context.tg)
    estimate = estimate_aposteriori(traj, params, context.mesh, context.tg)
    print(f"eta1={estimate.eta1:.6e} eta2={estimate.eta2:.6e} eta3={estimate.eta3:.6e}")
    if cfg.out:
        write_estimate_csv(Path(cfg.out), estimate)
    return 0


def cmd_nondim(args, settings) -> int:
    dimensional = DimensionalParams(
        K1=args.K1, K2=args.K2, r1=args.r1, r2=args.r2, D_N2=args.D_N2,
        D_N3=args.D_N3, r3=args.r3, d3=args.d3, d1=args.d1,
    )
    params, scales = nondimensionalize(dimensional)
    print(f"delta1={params.delta1!r} rho2={params.rho2!r} D2={params.D2!r} delta3={params.delta3!r}")
    print(f"L0={scales.L0!r} time_scale={scales.time_scale!r} length_scale={scales.length_scale!r}")
    return 0


COMMANDS = {
    "forward": cmd_forward,
    "adjoint": cmd_adjoint,
    "gradcheck": cmd_gradcheck,
    "fit": cmd_fit,
    "sweep": cmd_sweep,
    "noise-study": cmd_noise_study,
    "recovery-study": cmd_recovery_study,
    "error-estimate": cmd_error_estimate,
    "nondim": cmd_nondim,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        0 on success, 2 for invalid input or solver failures, 1 for unexpected errors
    """
    args = build_parser().parse_args(argv)
    try:
        settings = resolve_settings(args) if args.command != "nondim" else {}
        return COMMANDS[args.command](args, settings)

    except LIBRARY_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        return 1


if __name__ == "__main__":
    config.setup_logging()
    sys.exit(main())
