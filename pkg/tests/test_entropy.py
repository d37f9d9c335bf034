import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_cfg
from eulalign.entropy import (
    MaterialDerivative, breakdown_series, coulomb_energy_rate_1d, entropy_breakdown, coulomb_identity_residual,
    relative_kinetic,
)
from eulalign.errors import AlignmentError, ConfigError, UnsupportedError
from eulalign.kernels import kernel_constants
from eulalign.limit import LimitField, simulate_limit, solve_velocity
from eulalign.particles import ParticleState, simulate
from eulalign.transport import EmpiricalMeasure, cramer_energy_1d, wasserstein_1d, wasserstein_assignment


class LinearField:
    """u(x) = c x, with its exact Jacobian."""

    def __init__(self, c, dim=1):
        self.c, self.dim = c, dim

    def __call__(self, pts):
        return self.c * np.atleast_2d(pts)

    def gradient(self, pts, h=1e-4):
        pts = np.atleast_2d(pts)
        return np.broadcast_to(self.c * np.eye(self.dim), (pts.shape[0], self.dim, self.dim))


def zero_e(pts):
    return np.zeros_like(np.atleast_2d(pts))


def test_relative_kinetic_examples(rng):
    assert relative_kinetic(ParticleState(0.0, [[0.0]], [[3.0]]), lambda x: np.ones_like(x)) == 4.0
    x = rng.normal(size=(8, 2))
    assert relative_kinetic(ParticleState(0.0, x, 0.5 * x), LinearField(0.5, 2)) == 0.0
    v = rng.normal(size=(8, 2))
    ref = sum(float(v[i] @ v[i]) for i in range(8)) / 8
    assert relative_kinetic(ParticleState(0.0, x, v), lambda p: np.zeros_like(p)) == pytest.approx(ref, rel=1e-15)


def test_material_derivative_linear_field():
    # u = (1 + t) x at t = 1: du/dt = x, (u . grad) u = (1 + t)^2 x
    e = MaterialDerivative(LinearField(1.9), LinearField(2.0), LinearField(2.1), 0.9, 1.1)
    x = np.array([[0.3], [-2.0]])
    assert np.allclose(e(x), 5.0 * x, rtol=1e-12)
    with pytest.raises(ConfigError):
        MaterialDerivative(LinearField(1.0), LinearField(1.0), LinearField(1.0), 0.0, 1.0, h=1e-20)


def test_zero_field_zero_potential():
    cfg = make_cfg(N=5, kernel="zero")
    y = np.linspace(-1, 1, 5)[:, None]
    u = LimitField(y, np.zeros_like(y), cfg)
    state = ParticleState(0.3, y + 0.1, np.linspace(0, 1, 5)[:, None])
    b = entropy_breakdown(state, u, zero_e, cfg)
    assert b.I2 == 0 and b.I3 == 0 and b.I4 == 0 and b.I5 == 0
    assert b.rel_kinetic > 0 and b.alignment_rel_diss > 0


def test_coincident_measures(rng):
    cfg = make_cfg(N=10, dim=2)
    x = rng.normal(size=(10, 2))
    v = solve_velocity(x, cfg).velocities
    u = LimitField(x, v, cfg)
    b = entropy_breakdown(ParticleState(0.0, x, v + rng.normal(size=v.shape)), u, zero_e, cfg)
    assert b.I3 == 0.0
    assert abs(b.I5) <= 1e-10


def reference_breakdown(x, v, y, vy, cfg, e_field, h=1e-4):
    """Loop-by-loop evaluation of every term, independent of the vectorised code."""
    N, M, d = len(x), len(y), x.shape[1]
    eps, gamma = cfg.epsilon, cfg.gamma
    gW, phi = cfg.kernel.grad, cfg.comm.value

    def u(p):
        num, den = np.zeros(d), gamma
        for j in range(M):
            num += -gW(p - y[j]) / M + phi(p - y[j]) * vy[j] / M
            den += phi(p - y[j]) / M
        return num / den

    ux = np.array([u(xi) for xi in x])
    w = v - ux
    rel = sum(w[i] @ w[i] for i in range(N)) / N
    I2 = I3 = I4 = I5 = align = 0.0
    for i in range(N):
        J = np.zeros((d, d))
        for l in range(d):
            step = np.zeros(d)
            step[l] = h
            J[:, l] = (u(x[i] + step) - u(x[i] - step)) / (2 * h)
        I2 -= w[i] @ J @ w[i] / N
        diff = sum(gW(x[i] - x[j]) for j in range(N)) / N - sum(gW(x[i] - y[j]) for j in range(M)) / M
        I3 -= w[i] @ diff / (eps * N)
        I4 -= w[i] @ e_field(x[i][None, :])[0] / N
        a = sum(phi(x[i] - x[j]) * (ux[j] - ux[i]) for j in range(N)) / N
        b = sum(phi(x[i] - y[j]) * (vy[j] - ux[i]) for j in range(M)) / M
        I5 += w[i] @ (a - b) / (eps * N)
        for j in range(N):
            dw = w[i] - w[j]
            align += phi(x[i] - x[j]) * (dw @ dw) / (2 * N * N)
    return rel, I2, I3, I4, I5, align


@pytest.mark.parametrize("dim", [1, 2])
def test_breakdown_matches_double_loop_reference(dim, rng):
    cfg = make_cfg(N=4, dim=dim, epsilon=0.3, gamma=2.5)
    y = rng.normal(size=(4, dim))
    vy = solve_velocity(y, cfg).velocities
    x = y + 0.2 * rng.normal(size=y.shape)
    v = rng.normal(size=y.shape)
    e_field = LinearField(0.7, dim)
    got = entropy_breakdown(ParticleState(0.0, x, v), LimitField(y, vy, cfg), e_field, cfg)
    ref = reference_breakdown(x, v, y, vy, cfg, e_field)
    fields = (got.rel_kinetic, got.I2, got.I3, got.I4, got.I5, got.alignment_rel_diss)
    assert np.allclose(fields, ref, rtol=1e-12, atol=1e-12)


def test_breakdown_relabeling_invariance(rng):
    cfg = make_cfg(N=9, dim=2)
    y = rng.normal(size=(9, 2))
    u = LimitField(y, solve_velocity(y, cfg).velocities, cfg)
    x, v = y + 0.1 * rng.normal(size=y.shape), rng.normal(size=y.shape)
    perm = rng.permutation(9)
    a = entropy_breakdown(ParticleState(0.0, x, v), u, LinearField(1.0, 2), cfg)
    b = entropy_breakdown(ParticleState(0.0, x[perm], v[perm]), u, LinearField(1.0, 2), cfg)
    assert np.allclose(list(a.to_dict().values()), list(b.to_dict().values()), rtol=1e-12, atol=1e-14)


@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2]), st.floats(0.01, 1.0))
def test_nonnegativity_and_interaction_bound(seed, dim, spread):
    rng = np.random.default_rng(seed)
    N = 12
    cfg = make_cfg(N=N, dim=dim, epsilon=0.2)
    y = rng.normal(size=(N, dim))
    u = LimitField(y, solve_velocity(y, cfg).velocities, cfg)
    x, v = y + spread * rng.normal(size=y.shape), rng.normal(size=y.shape)
    b = entropy_breakdown(ParticleState(0.0, x, v), u, zero_e, cfg)
    assert b.rel_kinetic >= 0 and b.alignment_rel_diss >= 0
    mu, nu = EmpiricalMeasure.uniform(x), EmpiricalMeasure.uniform(y)
    d1 = wasserstein_1d(mu, nu, 1.0) if dim == 1 else wasserstein_assignment(mu, nu, 1.0)
    lip = kernel_constants(cfg.kernel).lip_const
    assert abs(cfg.epsilon * b.I3) <= lip * d1 * np.sqrt(b.rel_kinetic) + 1e-10


def test_balance_identity_along_trajectories(rng):
    """d/dt (rel_kinetic / 2) from the trajectories equals the sum of the breakdown terms."""
    N = 12
    x0 = rng.normal(size=(N, 1))
    gaps = []
    for dt in (2e-3, 1e-3):
        cfg = make_cfg(N=N, epsilon=0.5, gamma=3.0, t_final=0.1, dt=dt, snapshot_every=1)
        v0 = solve_velocity(x0, cfg).velocities + np.linspace(-0.3, 0.3, N)[:, None]
        series = breakdown_series(simulate(cfg, ParticleState(0.0, x0, v0), record_energy=False),
                                  simulate_limit(cfg, x0), cfg)
        rk = np.array([b.rel_kinetic for b in series])
        lhs = 0.25 * (rk[2:] - rk[:-2]) / cfg.step_size
        rhs = np.array([b.balance_rhs(cfg) for b in series])[1:-1]
        gaps.append(np.max(np.abs(lhs - rhs)))
        assert gaps[-1] <= 1e-3 * np.max(np.abs(rhs))
    assert 3.0 <= gaps[0] / gaps[1] <= 5.0


def test_breakdown_json_keys(rng):
    cfg = make_cfg(N=3)
    y = rng.normal(size=(3, 1))
    b = entropy_breakdown(ParticleState(0.0, y, y), LimitField(y, y, cfg), zero_e, cfg)
    assert set(json.loads(b.to_json())) == {"t", "rel_kinetic", "I2", "I3", "I4", "I5", "align_diss"}
    with pytest.raises(ConfigError):
        entropy_breakdown(ParticleState(0.0, y, y), LimitField(y, y, cfg), zero_e, cfg, h=0.0)


def test_coulomb_rate_matches_energy_derivative(rng):
    xe, xl = np.sort(rng.normal(size=6)), np.sort(rng.normal(size=6))
    ve, vl = rng.normal(size=6), rng.normal(size=6)

    def energy(t):
        return cramer_energy_1d(EmpiricalMeasure.uniform(xe + t * ve), EmpiricalMeasure.uniform(xl + t * vl))

    h = 1e-7
    fd = 0.5 * (energy(h) - energy(-h)) / (2 * h)
    assert coulomb_energy_rate_1d(xe, ve, xl, vl) == pytest.approx(fd, rel=1e-6, abs=1e-9)


def coulomb_pair(N=32, dt=1e-3, eps=0.1, t_final=0.5, seed=3):
    rng = np.random.default_rng(seed)
    x0 = np.concatenate([rng.normal(-1, 0.25, N // 2), rng.normal(1, 0.25, N - N // 2)])[:, None]
    cfg = make_cfg(N=N, kernel="coulomb_1d", epsilon=eps, gamma=10.0, t_final=t_final, dt=dt, snapshot_every=1)
    v0 = solve_velocity(x0, cfg).velocities
    return simulate(cfg, ParticleState(0.0, x0, v0), record_energy=False), simulate_limit(cfg, x0)


def test_coulomb_identity_trivial_cases():
    a, b = coulomb_pair(N=8, t_final=0.05)
    assert np.all(coulomb_identity_residual(b, b) == 0.0)
    cfg = make_cfg(N=4, kernel="zero", t_final=0.05, dt=1e-2, snapshot_every=1)
    frozen = simulate(cfg, ParticleState(0.0, [[0.0], [1.0], [2.0], [3.0]], np.zeros((4, 1))))
    frozen.config = a.config.with_(t_final=0.05, dt=1e-2)
    assert np.all(coulomb_identity_residual(frozen, frozen) == 0.0)


def test_coulomb_identity_refinement():
    maxima = [coulomb_identity_residual(*coulomb_pair(dt=dt)).max() for dt in (1e-3, 5e-4)]
    assert maxima[0] / maxima[1] >= 1.8


def test_coulomb_identity_errors():
    a, b = coulomb_pair(N=8, t_final=0.05)
    c, _ = coulomb_pair(N=8, t_final=0.05, dt=5e-4)
    with pytest.raises(AlignmentError):
        coulomb_identity_residual(c, b)
    cfg = make_cfg(N=3, t_final=0.05, dt=1e-2)
    traj = simulate(cfg, ParticleState(0.0, [[0.0], [1.0], [2.0]], np.zeros((3, 1))))
    with pytest.raises(UnsupportedError):
        coulomb_identity_residual(traj, traj)
