import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_cfg
from eulalign.errors import ContractionError, IterationLimitError
from eulalign.kernels import Domain, InteractionKernel
from eulalign.limit import (
    LimitField, simulate_limit, solve_velocity, solve_velocity_dense, velocity_bounds_report,
)


def test_two_particle_closed_form():
    c, gamma = 0.8, 3.0
    cfg = make_cfg(N=2, comm=("constant", c), gamma=gamma)
    x = np.array([[-0.3], [0.9]])
    g = InteractionKernel("gaussian").grad(x[0] - x[1])
    v = solve_velocity(x, cfg).velocities
    assert v[0] == pytest.approx(-g / (2 * (gamma + c)), abs=1e-13)
    assert v[1] == pytest.approx(g / (2 * (gamma + c)), abs=1e-13)
    assert np.allclose(v, solve_velocity_dense(x, cfg), atol=1e-13)


def test_zero_potential_gives_zero_velocity(rng):
    cfg = make_cfg(N=10, kernel="zero")
    sol = solve_velocity(rng.normal(size=(10, 1)), cfg)
    assert np.all(sol.velocities == 0) and sol.iterations == 0


def test_no_alignment_decouples(rng):
    x = rng.normal(size=(10, 2))
    cfg = make_cfg(N=10, dim=2, comm=("constant", 0.0), gamma=4.0)
    g = InteractionKernel("gaussian").grad(x[:, None, :] - x[None, :, :]).mean(axis=1)
    assert np.allclose(solve_velocity(x, cfg).velocities, -g / 4.0, atol=1e-14)


@given(st.integers(2, 40), st.integers(1, 3), st.floats(1.05, 4.0), st.integers(0, 2**32 - 1))
def test_contraction_each_sweep(N, dim, ratio, seed):
    rng = np.random.default_rng(seed)
    cfg = make_cfg(N=N, dim=dim, comm=("cucker_smale", 1.5, 0.5), gamma=1.5 * ratio)
    sol = solve_velocity(rng.normal(0, 1.5, (N, dim)), cfg, v0=rng.normal(size=(N, dim)))
    inc = np.array(sol.increments)
    q = cfg.comm.sup / cfg.gamma
    assert np.all(inc[1:] <= q * inc[:-1] + 1e-15)


@given(st.integers(1, 64), st.integers(0, 2**32 - 1))
def test_matches_dense_solve(N, seed):
    rng = np.random.default_rng(seed)
    cfg = make_cfg(N=N, dim=2, gamma=2.0, comm=("cucker_smale", 1.0, 1.0))
    x = rng.normal(0, 2.0, (N, 2))
    tol = 1e-12
    assert np.max(np.abs(solve_velocity(x, cfg, tol).velocities - solve_velocity_dense(x, cfg))) <= 10 * tol


def test_velocity_sup_bound(rng):
    cfg = make_cfg(N=30, gamma=1.5)
    x = rng.normal(size=(30, 1))
    v = solve_velocity(x, cfg).velocities
    force = InteractionKernel("gaussian").grad(x[:, None, :] - x[None, :, :]).mean(axis=1)
    assert np.abs(v).max() <= np.abs(force).max() / (cfg.gamma - cfg.comm.sup)


def test_contraction_and_iteration_errors(rng):
    with pytest.warns(RuntimeWarning):
        cfg = make_cfg(N=4, gamma=1.0)
    with pytest.raises(ContractionError):
        solve_velocity(rng.normal(size=(4, 1)), cfg)
    with pytest.raises(IterationLimitError) as info:
        solve_velocity(rng.normal(size=(4, 1)), make_cfg(N=4, gamma=1.1), max_iter=2)
    assert info.value.iterations == 2 and info.value.residual > 0


def test_limit_field_reproduces_particle_velocities(rng):
    cfg = make_cfg(N=12, dim=2)
    x = rng.normal(size=(12, 2))
    v = solve_velocity(x, cfg).velocities
    assert np.allclose(LimitField(x, v, cfg)(x), v, atol=1e-12)


def test_linear_coulomb_field_matches_particles(rng):
    cfg = make_cfg(N=12, kernel="coulomb_1d")
    x = np.sort(rng.normal(size=(12, 1)), axis=0)
    v = solve_velocity(x, cfg).velocities
    f = LimitField(x, v, cfg, "linear")
    assert np.allclose(f(x), v, atol=1e-12)
    # continuous across every particle
    assert np.allclose(f(x + 1e-9), f(x - 1e-9), atol=1e-7)


def test_single_particle_is_stationary():
    traj = simulate_limit(make_cfg(N=1, t_final=0.5, dt=0.05), [[0.4]])
    assert all(s.positions[0, 0] == 0.4 and s.velocities[0, 0] == 0.0 for s in traj.snapshots)


def test_attractive_pair_gap_decreases():
    cfg = make_cfg(N=2, comm=("constant", 0.0), gamma=2.0, t_final=2.0, dt=1e-2)
    traj = simulate_limit(cfg, [[-1.0], [1.0]])
    gap = np.array([s.positions[1, 0] - s.positions[0, 0] for s in traj.snapshots])
    assert np.all(np.diff(gap) < 0) and np.all(gap > 0)
    for s in traj.snapshots:
        assert s.positions[0, 0] == pytest.approx(-s.positions[1, 0], abs=1e-14)
        assert s.residual <= 1e-12


def test_bounds_report_zero_potential(rng):
    cfg = make_cfg(N=8, kernel="zero", t_final=0.1, dt=1e-2)
    rep = velocity_bounds_report(simulate_limit(cfg, rng.normal(size=(8, 1))), cfg)
    assert rep.sup_u == 0.0 and rep.bound_u == 0.0 and rep.holds


def test_bounds_report_two_particles():
    c, gamma = 0.5, 2.0
    cfg = make_cfg(N=2, comm=("constant", c), gamma=gamma, t_final=0.1, dt=1e-2)
    traj = simulate_limit(cfg, [[-0.5], [0.5]])
    rep = velocity_bounds_report(traj, cfg)
    g = abs(InteractionKernel("gaussian").grad(np.array([-1.0]))[0])
    assert abs(traj.snapshots[0].velocities[0, 0]) == pytest.approx(g / (2 * (gamma + c)))
    assert g / (2 * (gamma + c)) <= (g / 2) / (gamma - c)
    assert rep.holds


def test_bounds_report_random_configuration(rng):
    cfg = make_cfg(N=64, gamma=10.0, t_final=0.5, dt=1e-2)
    rep = velocity_bounds_report(simulate_limit(cfg, rng.normal(size=(64, 1))), cfg)
    assert rep.holds
    assert all(0 <= m <= 1 for m in rep.margins().values())
    assert set(__import__("json").loads(rep.to_json())) == {
        "sup_u", "bound_u", "sup_grad_u", "bound_grad_u", "sup_dt_u", "bound_dt_u", "gamma_threshold"}


def test_bounds_report_requires_threshold(rng):
    with pytest.warns(RuntimeWarning):
        cfg = make_cfg(N=4, gamma=1.0)
    traj = simulate_limit(make_cfg(N=4, gamma=3.0, t_final=0.1, dt=0.05), rng.normal(size=(4, 1)))
    with pytest.raises(ContractionError):
        velocity_bounds_report(traj, cfg)


def test_torus_limit_run(rng):
    cfg = make_cfg(N=16, domain=Domain("torus", 2, 2.0), t_final=0.2, dt=1e-2)
    traj = simulate_limit(cfg, rng.uniform(0, 2, (16, 2)))
    assert all(np.all((s.positions >= 0) & (s.positions < 2.0)) for s in traj.snapshots)
