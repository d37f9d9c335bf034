"""Overdamped (large-friction) limit of the particle system.

In the limit the velocities are slaved to the positions through the linear
system

    (gamma + (1/N) sum_j phi_ij) v_i = -(1/N) sum_j gradW(x_i - x_j) + (1/N) sum_j phi_ij v_j,

solved here by Jacobi iteration. Each sweep contracts the sup-norm error by at
least ``sup phi / gamma``, so ``gamma > sup phi`` is required.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ContractionError, DivergenceError, IterationLimitError
from .kernels import kernel_constants, mean_force_field, pair_displacements
from .particles import ParticleState, SimConfig, Trajectory

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 10_000


@dataclass
class LimitState(ParticleState):
    residual: float = 0.0
    iterations: int = 0

    def copy(self) -> "LimitState":
        return LimitState(self.time, self.positions.copy(), self.velocities.copy(), self.residual, self.iterations)


@dataclass
class VelocitySolution:
    velocities: np.ndarray
    iterations: int
    residual: float
    increments: list = field(default_factory=list)  # sup-norm of v^{k+1} - v^k per sweep


def check_damping(cfg: SimConfig) -> None:
    if not cfg.gamma > cfg.comm.sup:
        raise ContractionError(
            f"gamma = {cfg.gamma} must exceed sup phi = {cfg.comm.sup} for the velocity map to contract"
        )


class _LimitOperator:
    """Pair tables of the implicit velocity system at fixed positions."""

    def __init__(self, x, cfg: SimConfig):
        self.N = x.shape[0]
        r = pair_displacements(cfg.domain, x, x)
        self.phi = cfg.comm.value(r)  # diagonal phi(0) appears on both sides and cancels
        self.row = self.phi.sum(axis=1) / self.N
        self.force = mean_force_field(cfg.kernel, r, self_pairs=True)
        self.gamma = cfg.gamma

    def sweep(self, v):
        return (-self.force + self.phi @ v / self.N) / (self.gamma + self.row)[:, None]

    def residual(self, v) -> float:
        lhs = (self.gamma + self.row)[:, None] * v
        rhs = -self.force + self.phi @ v / self.N
        return float(np.max(np.abs(lhs - rhs))) if v.size else 0.0


def solve_velocity(positions, cfg: SimConfig, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                   v0=None) -> VelocitySolution:
    """Jacobi iteration for the limit velocities at ``positions``.

    Stops once the componentwise residual of the linear system is ``<= tol``.
    """
    check_damping(cfg)
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    op = _LimitOperator(x, cfg)
    v = np.zeros_like(x) if v0 is None else np.array(v0, dtype=float)
    increments = []
    res = op.residual(v)
    k = 0
    while res > tol:
        if k >= max_iter:
            raise IterationLimitError(
                f"velocity iteration did not reach tol {tol:g} in {max_iter} sweeps (residual {res:.3e})",
                residual=res, iterations=k,
            )
        v_new = op.sweep(v)
        increments.append(float(np.max(np.abs(v_new - v))))
        v = v_new
        k += 1
        res = op.residual(v)
    return VelocitySolution(v, k, res, increments)


def solve_velocity_dense(positions, cfg: SimConfig) -> np.ndarray:
    """Direct dense solve of the same linear system (reference for tests)."""
    x = np.atleast_2d(np.asarray(positions, dtype=float))
    op = _LimitOperator(x, cfg)
    A = np.diag(cfg.gamma + op.row) - op.phi / op.N
    return np.linalg.solve(A, -op.force)


class LimitField:
    """Continuum velocity field of an empirical limit density.

    ``u(x) = [-(gradW * rho)(x) + (phi * (rho u))(x)] / (gamma + (phi * rho)(x))``
    with ``rho`` the empirical measure of ``positions`` and ``u`` at the
    particles given by ``velocities``. At the particles it returns the particle
    velocities.

    For ``coulomb_1d`` the convolution ``gradW * rho = 1/2 - F_rho`` jumps at
    every particle. ``coulomb_mode="linear"`` replaces the CDF by the piecewise
    linear interpolant through the jump midpoints, which agrees with the
    particle values and makes the field Lipschitz.
    """

    def __init__(self, positions, velocities, cfg: SimConfig, coulomb_mode: str = "empirical"):
        self.x = np.atleast_2d(np.asarray(positions, dtype=float))
        self.v = np.atleast_2d(np.asarray(velocities, dtype=float))
        self.cfg = cfg
        if coulomb_mode not in ("empirical", "linear"):
            raise ConfigError(f"unknown coulomb_mode {coulomb_mode!r}")
        self.coulomb_mode = coulomb_mode
        if cfg.kernel.family == "coulomb_1d" and coulomb_mode == "linear":
            order = np.argsort(self.x[:, 0], kind="stable")
            self._xs = self.x[order, 0]
            N = len(self._xs)
            self._Fs = (np.arange(N) + 0.5) / N

    def force_field(self, pts) -> np.ndarray:
        """``(gradW * rho)(pts)``."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.cfg.kernel.family == "coulomb_1d" and self.coulomb_mode == "linear":
            F = np.interp(pts[:, 0], self._xs, self._Fs)
            return (0.5 - F)[:, None]
        r = pair_displacements(self.cfg.domain, pts, self.x)
        return mean_force_field(self.cfg.kernel, r)

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        r = pair_displacements(self.cfg.domain, pts, self.x)
        phi = self.cfg.comm.value(r)
        N = self.x.shape[0]
        num = -self.force_field(pts) + phi @ self.v / N
        return num / (self.cfg.gamma + phi.sum(axis=1) / N)[:, None]

    def gradient(self, pts, h: float = 1e-4) -> np.ndarray:
        """Central-difference Jacobian, shape (M, d, d) with ``[m, k, l] = d u_k / d x_l``."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        d = pts.shape[1]
        J = np.empty((pts.shape[0], d, d))
        for l in range(d):
            e = np.zeros(d)
            e[l] = h
            J[:, :, l] = (self(pts + e) - self(pts - e)) / (2.0 * h)
        return J


def simulate_limit(cfg: SimConfig, init_positions, tol: float = DEFAULT_TOL, t0: float = 0.0) -> Trajectory:
    """Midpoint-rule integration of ``dx_i/dt = v_i(x)`` with velocities re-solved at every stage."""
    check_damping(cfg)
    if cfg.gamma < 2.0 * cfg.comm.sup:
        warnings.warn(f"gamma = {cfg.gamma} is within a factor 2 of sup phi = {cfg.comm.sup}", RuntimeWarning,
                      stacklevel=2)
    x = cfg.domain.wrap(np.atleast_2d(np.asarray(init_positions, dtype=float)).copy())
    if x.shape != (cfg.N, cfg.domain.dim):
        raise ConfigError(f"initial positions have shape {x.shape}, config expects ({cfg.N}, {cfg.domain.dim})")
    h = cfg.step_size
    sol = solve_velocity(x, cfg, tol)
    snaps = [LimitState(t0, x.copy(), sol.velocities.copy(), sol.residual, sol.iterations)]
    v = sol.velocities
    for k in range(1, cfg.n_steps + 1):
        x_half = cfg.domain.wrap(x + 0.5 * h * v)
        mid = solve_velocity(x_half, cfg, tol, v0=v)
        x = cfg.domain.wrap(x + h * mid.velocities)
        sol = solve_velocity(x, cfg, tol, v0=mid.velocities)
        v = sol.velocities
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite positions at step {k}", step=k, time=t0 + k * h)
        if k % cfg.cadence == 0 or k == cfg.n_steps:
            snaps.append(LimitState(t0 + k * h, x.copy(), v.copy(), sol.residual, sol.iterations))
    return Trajectory(snaps, cfg, None)


@dataclass
class VelocityBoundsReport:
    sup_u: float
    bound_u: float
    sup_grad_u: float
    bound_grad_u: float
    sup_dt_u: float
    bound_dt_u: float
    gamma_threshold: float
    snapshot_ok: list = field(default_factory=list)  # per-snapshot sup_u <= bound_u

    @property
    def holds(self) -> bool:
        finite_ok = lambda s, b: (not math.isfinite(b)) or s <= b  # noqa: E731
        return (all(self.snapshot_ok) and finite_ok(self.sup_grad_u, self.bound_grad_u)
                and finite_ok(self.sup_dt_u, self.bound_dt_u))

    def margins(self) -> dict:
        out = {}
        for name in ("u", "grad_u", "dt_u"):
            s, b = getattr(self, f"sup_{name}"), getattr(self, f"bound_{name}")
            out[name] = (s / b) if b > 0 and math.isfinite(b) else (0.0 if s == 0 else math.nan)
        return out

    def to_json(self) -> str:
        d = asdict(self)
        d.pop("snapshot_ok")
        return json.dumps({k: (v if math.isfinite(v) else None) for k, v in d.items()}, sort_keys=True)


def _sample_lattice(x: np.ndarray, n_per_axis: int) -> np.ndarray:
    lo, hi = x.min(axis=0), x.max(axis=0)
    pad = 0.2 * np.maximum(hi - lo, 1e-3)
    axes = [np.linspace(a - p, b + p, n_per_axis) for a, b, p in zip(lo, hi, pad)]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=-1)


def velocity_bounds_report(traj: Trajectory, cfg: SimConfig, n_per_axis: int | None = None,
                           h: float = 1e-4) -> VelocityBoundsReport:
    """Compare sampled sups of ``u``, ``grad u`` and ``du/dt`` with their a-priori bounds.

    The ``u`` bound uses the sampled sup of ``gradW * rho`` at the particles and
    lattice points; the derivative bounds are assembled from certified kernel
    constants. Bounds that need a Lipschitz constant the kernel lacks are
    reported as ``inf``.
    """
    phi_sup = cfg.comm.sup
    if not cfg.gamma > phi_sup:
        raise ContractionError(f"gamma = {cfg.gamma} does not exceed the threshold sup phi = {phi_sup}")
    gap = cfg.gamma - phi_sup
    d = cfg.domain.dim
    n_per_axis = n_per_axis or (64 if d == 1 else 16)
    lip_phi = kernel_constants(cfg.comm).lip_const
    kc = kernel_constants(cfg.kernel)
    sup_gW, lip_gW = kc.sup_norm, kc.lip_const

    snaps = traj.snapshots
    sup_u = bound_u = sup_grad = sup_dt = 0.0
    ok = []
    prev_u = None
    # one fixed lattice over all snapshots so time differences are pointwise
    pts = _sample_lattice(np.concatenate([s.positions for s in snaps]), n_per_axis)
    for k, s in enumerate(snaps):
        field_k = LimitField(s.positions, s.velocities, cfg)
        u_pts = field_k(pts)
        u_all = np.concatenate([s.velocities, u_pts])
        G = np.concatenate([field_k.force_field(s.positions), field_k.force_field(pts)])
        su = float(np.max(np.linalg.norm(u_all, axis=1)))
        bu = float(np.max(np.linalg.norm(G, axis=1))) / gap
        ok.append(su <= bu * (1 + 1e-12) + 1e-300)
        sup_u, bound_u = max(sup_u, su), max(bound_u, bu)
        if cfg.kernel.is_regular:
            J = field_k.gradient(pts, h)
            sup_grad = max(sup_grad, float(np.max(np.linalg.norm(J, ord=2, axis=(1, 2)))))
        if prev_u is not None:
            dt = s.time - snaps[k - 1].time
            sup_dt = max(sup_dt, float(np.max(np.linalg.norm(u_pts - prev_u, axis=1))) / dt)
        prev_u = u_pts

    if lip_gW is None:
        return VelocityBoundsReport(sup_u, bound_u, math.nan, math.inf, sup_dt, math.inf, phi_sup, ok)
    U = sup_gW / gap  # certified sup of u
    phi_w1 = phi_sup + lip_phi
    bound_grad = (1 + lip_phi / cfg.gamma) / cfg.gamma * ((sup_gW + lip_gW) + phi_w1 * sup_gW / gap)
    U1 = U + bound_grad
    bound_dt = (lip_gW * U + 2.0 * phi_w1 * U1 * U1) / gap + lip_phi * U / (cfg.gamma * gap) * (sup_gW + phi_sup * U)
    return VelocityBoundsReport(sup_u, bound_u, sup_grad, bound_grad, sup_dt, bound_dt, phi_sup, ok)
