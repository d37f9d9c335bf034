"""Characteristic flows of velocity fields and Wasserstein stability checks.

A :class:`VelocityField` wraps ``u(x, t)`` (vectorised over points) together
with a sampled estimate of ``sup |grad u|``. Characteristics are integrated
with classical RK4 and step-doubling error control, so the same routine runs
forwards or backwards in time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DivergenceError
from .limit import LimitField
from .particles import SimConfig, Trajectory
from .transport import EmpiricalMeasure, wasserstein_1d, wasserstein_assignment

Evaluator = Callable[[np.ndarray, float], np.ndarray]

LATTICE_MARGIN = 0.2


def _lattice(lo, hi, n_per_axis: int):
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    pad = LATTICE_MARGIN * np.maximum(hi - lo, 1e-3)
    axes = [np.linspace(a - p, b + p, n_per_axis) for a, b, p in zip(lo, hi, pad)]
    grid = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=-1), axes


def estimate_grad_sup(evaluator: Evaluator, points, times=(0.0,), n_per_axis: int = 64, h: float = 1e-6) -> float:
    """Sampled ``sup |grad u|`` over a lattice covering ``points`` plus a 20% margin.

    Takes the larger of the central-difference Jacobian norm at every lattice
    node and the difference quotients between neighbouring nodes.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = points.shape[1]
    pts, axes = _lattice(points.min(axis=0), points.max(axis=0), n_per_axis)
    shape = (n_per_axis,) * d
    best = 0.0
    for t in times:
        J = np.empty((pts.shape[0], d, d))
        for l in range(d):
            e = np.zeros(d)
            e[l] = h
            J[:, :, l] = (evaluator(pts + e, t) - evaluator(pts - e, t)) / (2.0 * h)
        best = max(best, float(np.max(np.linalg.norm(J, ord=2, axis=(1, 2)))))
        u = evaluator(pts, t).reshape(shape + (d,))
        for l in range(d):
            du = np.diff(u, axis=l)
            step = axes[l][1] - axes[l][0]
            best = max(best, float(np.max(np.linalg.norm(du, axis=-1))) / step)
    return best


@dataclass
class VelocityField:
    evaluator: Evaluator
    dim: int
    grad_sup: float = math.nan

    def __call__(self, pts, t: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.asarray(self.evaluator(pts, t), dtype=float).reshape(pts.shape)

    def with_grad_sup(self, points, times=(0.0,), n_per_axis: int = 64) -> "VelocityField":
        g = estimate_grad_sup(self.evaluator, points, times, n_per_axis)
        return VelocityField(self.evaluator, self.dim, g)

    @classmethod
    def from_trajectory(cls, traj: Trajectory, cfg: SimConfig, coulomb_mode: str = "empirical",
                        n_per_axis: int | None = None, max_grad_samples: int = 11) -> "VelocityField":
        """Limit velocity field, linear in time between snapshots and constant outside them."""
        times = traj.times
        fields = [LimitField(s.positions, s.velocities, cfg, coulomb_mode) for s in traj.snapshots]

        def evaluator(pts, t):
            if t <= times[0]:
                return fields[0](pts)
            if t >= times[-1]:
                return fields[-1](pts)
            k = int(np.searchsorted(times, t, side="right")) - 1
            theta = (t - times[k]) / (times[k + 1] - times[k])
            return (1.0 - theta) * fields[k](pts) + theta * fields[k + 1](pts)

        d = cfg.domain.dim
        n_per_axis = n_per_axis or (64 if d <= 2 else 16)
        idx = np.unique(np.linspace(0, len(times) - 1, min(max_grad_samples, len(times))).round().astype(int))
        grad = estimate_grad_sup(evaluator, np.concatenate([s.positions for s in traj.snapshots]), times[idx],
                                 n_per_axis)
        return cls(evaluator, d, grad)


def _rk4(field: VelocityField, x, t, h):
    k1 = field(x, t)
    k2 = field(x + 0.5 * h * k1, t + 0.5 * h)
    k3 = field(x + 0.5 * h * k2, t + 0.5 * h)
    k4 = field(x + h * k3, t + h)
    return x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def flow_map(field: VelocityField, x0, T: float, t0: float = 0.0, tol: float = 1e-12,
             max_steps: int = 1_000_000) -> np.ndarray:
    """``X(T; t0, x0)`` for every row of ``x0``; ``T < t0`` integrates backwards."""
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    span = T - t0
    if span == 0.0:
        return x
    direction = math.copysign(1.0, span)
    h = abs(span) / 16.0
    t = t0
    for _ in range(max_steps):
        remaining = abs(T - t)
        if remaining <= 1e-15 * max(1.0, abs(T)):
            return x
        h = min(h, remaining)
        hs = direction * h
        with np.errstate(over="ignore", invalid="ignore"):
            full = _rk4(field, x, t, hs)
            half = _rk4(field, _rk4(field, x, t, 0.5 * hs), t + 0.5 * hs, 0.5 * hs)
        if not (np.all(np.isfinite(full)) and np.all(np.isfinite(half))):
            raise DivergenceError(f"characteristic left the finite range near t = {t:.6g}", time=t)
        err = float(np.max(np.abs(half - full))) / 15.0
        scale = tol * (1.0 + float(np.max(np.abs(half))))
        if err <= scale:
            x = half + (half - full) / 15.0
            t = T if h == remaining else t + hs
        factor = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 * (scale / err) ** 0.2))
        h *= factor
    raise DivergenceError(f"flow map did not reach t = {T} within {max_steps} steps", time=t)


def pushforward(measure: EmpiricalMeasure, field: VelocityField, T: float, t0: float = 0.0) -> EmpiricalMeasure:
    """Image of ``measure`` under the flow; weights are carried over unchanged."""
    pts = flow_map(field, measure.points, T, t0)
    return EmpiricalMeasure(pts, measure.weights.copy())


@dataclass
class LipschitzFlowReport:
    T: float
    grad_sup: float
    bound: float
    ratios: np.ndarray
    slack: float = 1e-6

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios)) if len(self.ratios) else 0.0

    @property
    def holds(self) -> bool:
        return bool(np.all(self.ratios <= self.bound * (1.0 + self.slack)))


def lipschitz_flow_check(field: VelocityField, sample_pairs, T: float, t0: float = 0.0) -> LipschitzFlowReport:
    """Compare ``|X(T;x) - X(T;y)| / |x - y|`` with ``exp(grad_sup (T - t0))`` on sampled pairs.

    ``sample_pairs`` has shape (P, 2, d); pairs with ``x == y`` are skipped.
    """
    if not math.isfinite(field.grad_sup):
        raise ConfigError("the field has no finite grad_sup estimate")
    pairs = np.asarray(sample_pairs, dtype=float)
    if pairs.ndim == 2:
        pairs = pairs[:, :, None]
    if pairs.ndim != 3 or pairs.shape[1] != 2:
        raise ConfigError(f"sample_pairs must have shape (P, 2, d), got {pairs.shape}")
    gap0 = np.linalg.norm(pairs[:, 0] - pairs[:, 1], axis=1)
    keep = gap0 > 0
    pairs, gap0 = pairs[keep], gap0[keep]
    P = pairs.shape[0]
    mapped = flow_map(field, np.concatenate([pairs[:, 0], pairs[:, 1]]), T, t0)
    gap1 = np.linalg.norm(mapped[:P] - mapped[P:], axis=1)
    return LipschitzFlowReport(T - t0, field.grad_sup, math.exp(field.grad_sup * abs(T - t0)), gap1 / gap0)


def _distance(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float) -> float:
    if mu.dim == 1:
        return wasserstein_1d(mu, nu, p)
    return wasserstein_assignment(mu, nu, p)


@dataclass
class StabilityReport:
    p: float
    T: float
    grad_sup: float
    C_min_feasible: float
    max_ratio_lipschitz: float
    times: np.ndarray = field(repr=False)
    distances: np.ndarray = field(repr=False)
    rhs: np.ndarray = field(repr=False)
    C_used: float | None = None
    holds: bool | None = None

    def to_dict(self) -> dict:
        def clean(v):
            return v if math.isfinite(v) else None

        return {"p": self.p, "T": self.T, "grad_sup": clean(self.grad_sup),
                "C_min_feasible": clean(self.C_min_feasible), "max_ratio_lipschitz": clean(self.max_ratio_lipschitz)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def stability_inequality_check(rho_bar_traj: Trajectory, u_bar_samples, field: VelocityField, p: float = 2.0,
                               C_fit: float | None = None, rho0=None, atol: float = 1e-8) -> StabilityReport:
    """Check ``d_p(rho_bar(t), rho(t)) <= C [d_p(rho_bar(0), rho(0)) + (int_0^t int |u_bar - u|^2 d rho_bar)^(1/2)]``.

    ``rho(t)`` is the push-forward of ``rho0`` (default: the atoms of
    ``rho_bar(0)``) along ``field``; ``u_bar_samples`` holds the velocities of
    the ``rho_bar`` atoms at every snapshot (default: the trajectory's own).
    The velocity defect is integrated with the trapezoid rule on the snapshot
    grid. With ``C_fit`` the constant ``C = C_fit exp(C_fit grad_sup)`` is
    tested, allowing ``atol`` for integrator error.
    """
    if not (1.0 <= p <= 2.0):
        raise ConfigError(f"the stability inequality is stated for p in [1, 2], got {p!r}")
    snaps = rho_bar_traj.snapshots
    times = rho_bar_traj.times
    if u_bar_samples is None:
        u_bar_samples = [s.velocities for s in snaps]
    if len(u_bar_samples) != len(snaps):
        raise ConfigError("need one velocity sample per snapshot")
    if rho0 is None:
        rho0 = EmpiricalMeasure.uniform(snaps[0].positions)
    elif not isinstance(rho0, EmpiricalMeasure):
        rho0 = EmpiricalMeasure.uniform(rho0)

    pts0 = rho0.points
    pts = pts0
    t_prev = times[0]
    dist = np.empty(len(snaps))
    defect = np.empty(len(snaps))
    for k, s in enumerate(snaps):
        if k:
            pts = flow_map(field, pts, times[k], t_prev)
            t_prev = times[k]
        bar = EmpiricalMeasure.uniform(s.positions)
        dist[k] = _distance(bar, EmpiricalMeasure(pts, rho0.weights), p)
        w = np.asarray(u_bar_samples[k], dtype=float).reshape(s.positions.shape) - field(s.positions, times[k])
        defect[k] = float(np.mean(np.sum(w * w, axis=1)))
    integral = np.concatenate(([0.0], np.cumsum(0.5 * (defect[1:] + defect[:-1]) * np.diff(times))))
    rhs = dist[0] + np.sqrt(integral)

    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, dist / rhs, np.where(dist <= atol, 0.0, np.inf))
    C_min = float(np.max(ratio))

    # Lipschitz ratio of the flow on pairs of initial atoms, read off the final push-forward
    M = pts0.shape[0]
    i, j = np.triu_indices(M, 1)
    if len(i) > 4096:
        sel = np.linspace(0, len(i) - 1, 4096).astype(int)
        i, j = i[sel], j[sel]
    g0 = np.linalg.norm(pts0[i] - pts0[j], axis=1)
    keep = g0 > 0
    lip = float(np.max(np.linalg.norm(pts[i] - pts[j], axis=1)[keep] / g0[keep])) if np.any(keep) else 1.0

    report = StabilityReport(float(p), float(times[-1] - times[0]), field.grad_sup, C_min, lip, times, dist, rhs)
    if C_fit is not None:
        C = C_fit * math.exp(C_fit * field.grad_sup)
        report.C_used = C
        report.holds = bool(np.all(dist <= C * rhs + atol))
    return report
