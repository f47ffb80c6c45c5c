import numpy as np
import pytest

from app.models import ExperimentConfig, NondimParams
from app.services.cache_manager import CacheManager
from app.services.fem1d import Mesh1D
from app.services.forward_solver import TimeGrid, default_initial_condition, solve_forward


@pytest.fixture
def small_mesh():
    return Mesh1D(21)


@pytest.fixture
def short_grid():
    return TimeGrid(0.5, 2.0)


@pytest.fixture
def params():
    return NondimParams(delta1=12.5, rho2=1.0, D2=4e-5, delta3=1.0)


@pytest.fixture
def small_trajectory(params, small_mesh, short_grid):
    ic = default_initial_condition(small_mesh, 0.1)
    return solve_forward(params, ic, small_mesh, short_grid)


@pytest.fixture
def small_config():
    """Coarse experiment that solves in well under a second"""
    return ExperimentConfig(
        nod=21, tau=0.5, t_final=2.0, delta1_hat=12.5,
        sigmas=[0.0, 0.05], trials=3, delta1_init=8.0, seed=7,
    )


@pytest.fixture
def cache(tmp_path):
    return CacheManager(tmp_path / "cache", enabled=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
