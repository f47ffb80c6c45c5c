import numpy as np
import pytest

from app.models import DimensionalParams, NondimParams
from app.services.model_core import nondimensionalize, reaction, reaction_jacobian


def test_reference_constants_give_tabulated_groups():
    params, scales = nondimensionalize(DimensionalParams.reference(d1=0.05))

    assert params.delta1 == pytest.approx(0.5, rel=1e-12)
    assert params.rho2 == pytest.approx(1.0)
    assert params.D2 == pytest.approx(4e-5, rel=1e-12)
    assert params.delta3 == pytest.approx(110.0, rel=1e-12)
    assert scales.L0 == pytest.approx(1e-5, rel=1e-12)


def test_scales_recover_dimensional_units():
    _, scales = nondimensionalize(DimensionalParams.reference(d1=1.0))

    assert scales.time_scale == pytest.approx(1e6)
    assert scales.length_scale == pytest.approx(np.sqrt(5e-6 / 1e-6))


def test_delta1_is_linear_in_d1():
    p1, _ = nondimensionalize(DimensionalParams.reference(d1=0.05))
    p2, _ = nondimensionalize(DimensionalParams.reference(d1=1.25))

    assert p2.delta1 / p1.delta1 == pytest.approx(25.0)


@pytest.mark.parametrize("d1", [0.0, -1.0])
def test_nonpositive_constants_are_rejected(d1):
    with pytest.raises(ValueError):
        DimensionalParams.reference(d1=d1)


def test_negative_delta1_is_rejected():
    with pytest.raises(ValueError):
        NondimParams(delta1=-0.1, rho2=1.0, D2=4e-5, delta3=1.0)


def test_healthy_tissue_is_an_equilibrium(params):
    f = reaction(1.0, 0.0, 0.0, params)

    assert (f.f1, f.f2, f.f3) == (0.0, 0.0, 0.0)


def test_reaction_at_mixed_state():
    p = NondimParams(delta1=1.0, rho2=1.0, D2=4e-5, delta3=1.0)
    f = reaction(0.5, 0.5, 0.5, p)

    assert float(f.f1) == pytest.approx(0.0)
    assert float(f.f2) == pytest.approx(0.25)
    assert float(f.f3) == pytest.approx(0.0)


def test_reaction_broadcasts_over_arrays(params, rng):
    u = rng.random((3, 4, 5))
    f = reaction(u[0], u[1], u[2], params)

    assert f.f1.shape == (4, 5)
    assert np.allclose(f.f3, params.delta3 * (u[1] - u[2]))


def test_jacobian_matches_finite_differences(params, rng):
    eps = 1e-7
    for _ in range(10):
        u = rng.random(3)
        jac = reaction_jacobian(*u, params).entries
        for k in range(3):
            du = np.zeros(3)
            du[k] = eps
            plus = np.array(reaction(*(u + du), params))
            minus = np.array(reaction(*(u - du), params))
            assert np.allclose(jac[:, k], (plus - minus) / (2 * eps), atol=1e-6)


def test_jacobian_structural_zeros(params):
    jac = reaction_jacobian(np.full(7, 0.3), np.full(7, 0.6), np.full(7, 0.2), params)

    assert jac.entries.shape == (7, 3, 3)
    for i, j in [(0, 1), (1, 0), (1, 2), (2, 0)]:
        assert np.all(jac[..., i, j] == 0.0)
