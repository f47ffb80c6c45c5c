import numpy as np
import pytest

from app.services.adjoint_solver import adjoint_operator, solve_adjoint
from app.services.fem1d import Mesh1D, assemble_mass, kron_identity
from app.services.forward_solver import TimeGrid, default_initial_condition, solve_forward, spatial_jacobian
from app.services.observations import GridMismatchError, ObservationSet


def _noisy_obs(traj, rng, scale=0.05):
    uhat3 = traj.u3 + scale * rng.standard_normal(traj.u3.shape)
    return ObservationSet(uhat3=uhat3, mesh=traj.mesh, time_grid=traj.time_grid)


def test_adjoint_operator_is_transpose_of_state_jacobian(params, rng):
    mesh = Mesh1D(11)
    U = rng.random((mesh.nod, 3))

    s = spatial_jacobian(U, params, mesh).to_dense()
    h = adjoint_operator(U, params, mesh).to_dense()

    assert np.allclose(h, s.T, atol=1e-13)


def test_space_time_duality(params, rng):
    mesh = Mesh1D(11)
    tg = TimeGrid(0.5, 2.0)
    traj = solve_forward(params, default_initial_condition(mesh, 0.2), mesh, tg)
    mass = kron_identity(assemble_mass(mesh))
    tau, nt = tg.tau, tg.nt

    # row m holds time level m + 1; the state perturbation at level 0 is zero

    def forward_form(eta, zeta):
        # sum_m zeta^m . [M (eta^m - eta^{m-1}) + tau S'(u^m) eta^m]
        total = 0.0
        for m in range(nt):
            prev = eta[m - 1] if m > 0 else np.zeros_like(eta[m])
            s = spatial_jacobian(traj.u[m + 1], params, mesh)
            total += np.sum(zeta[m] * (mass.matvec(eta[m] - prev) + tau * s.matvec(eta[m])))
        return total

    def adjoint_form(eta, zeta):
        # sum_m eta^m . [(M + tau H(u^m)) zeta^m - M zeta^{m+1}], zeta beyond T = 0
        total = 0.0
        for m in range(nt):
            nxt = zeta[m + 1] if m + 1 < nt else np.zeros_like(zeta[m])
            h = adjoint_operator(traj.u[m + 1], params, mesh)
            total += np.sum(eta[m] * (mass.matvec(zeta[m]) + tau * h.matvec(zeta[m]) - mass.matvec(nxt)))
        return total

    for _ in range(20):
        eta = rng.standard_normal((nt, mesh.nod, 3))
        zeta = rng.standard_normal((nt, mesh.nod, 3))
        bound = 1e-8 * np.linalg.norm(eta) * np.linalg.norm(zeta)
        assert abs(forward_form(eta, zeta) - adjoint_form(eta, zeta)) <= bound


def test_exact_data_gives_zero_adjoint(params, small_trajectory):
    obs = ObservationSet(uhat3=small_trajectory.u3.copy(), mesh=small_trajectory.mesh,
                         time_grid=small_trajectory.time_grid)

    adj = solve_adjoint(params, small_trajectory, obs, small_trajectory.mesh, small_trajectory.time_grid)

    assert np.all(adj.lam == 0.0)


def test_final_and_boundary_conditions(params, small_trajectory, rng):
    obs = _noisy_obs(small_trajectory, rng)

    adj = solve_adjoint(params, small_trajectory, obs, small_trajectory.mesh, small_trajectory.time_grid)

    assert np.all(adj.lam[-1] == 0.0)
    assert np.all(adj.lam[:, -1, :] == 0.0)
    assert np.any(adj.lambda3 != 0.0)
    assert np.array_equal(adj.gamma, adj.lam[0])


def test_adjoint_is_linear_in_the_misfit(params, small_trajectory, rng):
    obs = _noisy_obs(small_trajectory, rng)
    doubled = ObservationSet(
        uhat3=small_trajectory.u3 - 2.0 * (small_trajectory.u3 - obs.uhat3),
        mesh=obs.mesh, time_grid=obs.time_grid,
    )
    mesh, tg = small_trajectory.mesh, small_trajectory.time_grid

    lam = solve_adjoint(params, small_trajectory, obs, mesh, tg).lam
    lam2 = solve_adjoint(params, small_trajectory, doubled, mesh, tg).lam

    assert np.allclose(lam2, 2.0 * lam, rtol=1e-10, atol=1e-14)


def test_grid_mismatch_is_rejected(params, small_trajectory):
    other_mesh = Mesh1D(11)
    obs = ObservationSet(
        uhat3=np.zeros((small_trajectory.time_grid.nt + 1, other_mesh.nod)),
        mesh=other_mesh, time_grid=small_trajectory.time_grid,
    )

    with pytest.raises(GridMismatchError):
        solve_adjoint(params, small_trajectory, obs, small_trajectory.mesh, small_trajectory.time_grid)


def test_observation_shape_is_validated(small_mesh, short_grid):
    with pytest.raises(GridMismatchError):
        ObservationSet(uhat3=np.zeros((3, small_mesh.nod)), mesh=small_mesh, time_grid=short_grid)
