import pytest

from app.models import ExperimentConfig, OptimOptions
from app.services.experiments import build_context, generate_synthetic
from app.services.forward_solver import ForwardSolveError
from app.services.model_core import InvalidParameterError
from app.services.optimizer import FitError, fit, minimize, project, projected_gradient


class Analytic:
    """Closed-form objective with evaluation counters"""

    def __init__(self, value, gradient, fails_above=None, fails_once=()):
        self._value = value
        self._gradient = gradient
        self.fails_above = fails_above
        self.fails_once = set(fails_once)
        self.forward_solves = 0
        self.adjoint_solves = 0

    def _check(self, d):
        if self.fails_above is not None and d > self.fails_above:
            raise ForwardSolveError(f"no solution at delta1={d}")
        if d in self.fails_once:
            self.fails_once.discard(d)
            raise ForwardSolveError(f"Newton stalled at delta1={d}")

    def value(self, d):
        self._check(d)
        self.forward_solves += 1
        return self._value(d)

    def gradient(self, d):
        self._check(d)
        self.adjoint_solves += 1
        return self._gradient(d)


def quadratic(center):
    return Analytic(lambda d: (d - center) ** 2, lambda d: 2.0 * (d - center))


@pytest.mark.parametrize("value, expected", [(25.0, 20.0), (-1.0, 0.0), (8.0, 8.0)])
def test_project_onto_bounds(value, expected):
    assert project(value, (0.0, 20.0)) == expected


def test_projected_gradient_drops_outward_components():
    assert projected_gradient(0.0, 3.0, (0.0, 20.0)) == 0.0
    assert projected_gradient(20.0, -3.0, (0.0, 20.0)) == 0.0
    assert projected_gradient(0.0, -3.0, (0.0, 20.0)) == -3.0
    assert projected_gradient(10.0, 3.0, (0.0, 20.0)) == 3.0


def test_minimize_interior_quadratic():
    functional = quadratic(5.0)

    result = minimize(functional, 8.0, OptimOptions(bounds=(0.0, 20.0)))

    assert result.converged
    assert result.termination == "gradient"
    assert result.delta1_star == pytest.approx(5.0, abs=1e-10)
    assert result.iterations == len(result.trace) == 2
    assert result.forward_solves == functional.forward_solves


def test_minimize_stops_on_active_bound():
    result = minimize(quadratic(25.0), 8.0, OptimOptions(bounds=(0.0, 20.0)))

    assert result.converged
    assert result.delta1_star == 20.0
    assert result.grad_star < 0.0


def test_trace_is_monotone():
    functional = Analytic(lambda d: (d - 3.0) ** 4 + (d - 3.0) ** 2, lambda d: 4 * (d - 3.0) ** 3 + 2 * (d - 3.0))

    result = minimize(functional, 15.0, OptimOptions(bounds=(0.0, 20.0)))

    values = [entry.J for entry in result.trace]
    assert all(b <= a for a, b in zip(values, values[1:]))
    assert [entry.iteration for entry in result.trace] == list(range(result.iterations))
    assert result.delta1_star == pytest.approx(3.0, abs=1e-3)


def test_nonconvex_objective_takes_bounded_descent_step():
    functional = Analytic(lambda d: -d, lambda d: -1.0)

    result = minimize(functional, 8.0, OptimOptions(bounds=(0.0, 20.0)))

    assert result.delta1_star == 20.0
    assert result.termination == "gradient"


def test_failed_trial_is_rejected_and_search_continues():
    functional = Analytic(lambda d: (d - 5.0) ** 2, lambda d: 2.0 * (d - 5.0), fails_once=[5.0])

    result = minimize(functional, 8.0, OptimOptions(bounds=(0.0, 20.0)))

    assert result.converged
    assert result.trace[1].delta1 == 6.5
    assert result.delta1_star == pytest.approx(5.0, abs=1e-8)


def test_solves_failing_beyond_a_point_raise_fit_error():
    functional = Analytic(lambda d: (d - 30.0) ** 2, lambda d: 2.0 * (d - 30.0), fails_above=8.0001)

    with pytest.raises(FitError) as exc_info:
        minimize(functional, 8.0, OptimOptions(bounds=(0.0, 20.0)))

    trace = exc_info.value.trace
    assert trace[0].delta1 == 8.0
    assert all(entry.delta1 <= 8.0001 for entry in trace)
    assert all(entry.grad < -40.0 for entry in trace)


def test_failures_near_the_bound_end_in_fit_error_not_convergence():
    functional = Analytic(lambda d: (d - 30.0) ** 2, lambda d: 2.0 * (d - 30.0), fails_above=15.0)

    with pytest.raises(FitError) as exc_info:
        minimize(functional, 8.0, OptimOptions(bounds=(0.0, 20.0)))

    trace = exc_info.value.trace
    assert all(entry.delta1 <= 15.0 for entry in trace)
    assert trace[-1].delta1 > 8.0


def test_start_outside_bounds_is_rejected():
    with pytest.raises(InvalidParameterError):
        minimize(quadratic(5.0), 21.0, OptimOptions(bounds=(0.0, 20.0)))


def test_unevaluable_start_raises_fit_error():
    functional = Analytic(lambda d: d, lambda d: 1.0, fails_above=5.0)

    with pytest.raises(FitError) as exc_info:
        minimize(functional, 8.0, OptimOptions(bounds=(0.0, 20.0)))

    assert exc_info.value.trace == []


def test_fit_requires_a_context(small_config):
    obs = generate_synthetic(small_config, 0.0)

    with pytest.raises(InvalidParameterError):
        fit(obs, 8.0)


def test_fit_from_true_parameter_stops_immediately(small_config):
    obs = generate_synthetic(small_config, 0.0)

    result = fit(obs, small_config.delta1_hat, OptimOptions(), build_context(small_config))

    assert result.converged
    assert result.iterations == 1
    assert result.delta1_star == small_config.delta1_hat
    assert result.J_star == 0.0


@pytest.mark.slow
@pytest.mark.parametrize("delta1_0", [2.0, 8.0, 19.0])
def test_noiseless_fit_recovers_parameter(delta1_0):
    cfg = ExperimentConfig(delta1_hat=12.5)
    obs = generate_synthetic(cfg, 0.0)

    result = fit(obs, delta1_0, OptimOptions(), build_context(cfg))

    assert result.converged
    assert abs(result.delta1_star - 12.5) / 12.5 < 1e-3
