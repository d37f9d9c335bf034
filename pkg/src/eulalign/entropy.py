"""Relative-entropy error functionals between an eps-run and the limit.

All integrals against the eps-density are sums over the eps-particles with
mass 1/N. With ``w_i = v_i - u(x_i)`` the discrete relative-entropy balance reads

    d/dt (1/2) rel_kinetic = -(gamma/eps) rel_kinetic - (1/eps) align_diss + I2 + I3 + I4 + I5

where every term is evaluated as an instantaneous rate (no time integral).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import AlignmentError, ConfigError, UnsupportedError
from .kernels import mean_force_field, pair_displacements
from .limit import LimitField
from .particles import ParticleState, SimConfig, Trajectory


@dataclass
class RelativeEntropyBreakdown:
    t: float
    rel_kinetic: float
    I2: float
    I3: float
    I4: float
    I5: float
    alignment_rel_diss: float

    def to_dict(self) -> dict:
        d = asdict(self)
        d["align_diss"] = d.pop("alignment_rel_diss")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def balance_rhs(self, cfg: SimConfig) -> float:
        """Right-hand side of the balance for ``d/dt (rel_kinetic / 2)``."""
        e = cfg.epsilon
        return (-cfg.gamma / e * self.rel_kinetic - self.alignment_rel_diss / e
                + self.I2 + self.I3 + self.I4 + self.I5)


def relative_kinetic(state_eps: ParticleState, u_field) -> float:
    w = state_eps.velocities - u_field(state_eps.positions)
    return float(np.mean(np.sum(w * w, axis=1)))


class MaterialDerivative:
    """``e = du/dt + (u . grad) u`` from three consecutive limit fields.

    The time derivative is the central difference across the neighbours; the
    convective part uses central differences of step ``h`` in space.
    """

    def __init__(self, before: LimitField, now: LimitField, after: LimitField, t_before: float, t_after: float,
                 h: float = 1e-4):
        if not t_after > t_before:
            raise ConfigError("time stencil must be increasing")
        if not h > 1e-12:
            raise ConfigError(f"finite-difference step {h!r} is too small")
        self.before, self.now, self.after = before, now, after
        self.span = t_after - t_before
        self.h = h

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        dudt = (self.after(pts) - self.before(pts)) / self.span
        J = self.now.gradient(pts, self.h)
        return dudt + np.einsum("mkl,ml->mk", J, self.now(pts))


def entropy_breakdown(state_eps: ParticleState, u_field: LimitField, e_field, cfg: SimConfig,
                      h: float = 1e-4) -> RelativeEntropyBreakdown:
    """Evaluate the relative kinetic energy, I2..I5 and the alignment term at one time."""
    if not h > 1e-12:
        raise ConfigError(f"finite-difference step {h!r} is too small")
    x, v = state_eps.positions, state_eps.velocities
    N = x.shape[0]
    eps = cfg.epsilon
    u_eps = u_field(x)
    w = v - u_eps

    J = u_field.gradient(x, h)
    I2 = -float(np.mean(np.einsum("nk,nkl,nl->n", w, J, w)))

    r_ee = pair_displacements(cfg.domain, x, x)
    G_eps = mean_force_field(cfg.kernel, r_ee, self_pairs=True)
    G_lim = u_field.force_field(x)
    I3 = -float(np.mean(np.sum(w * (G_eps - G_lim), axis=1))) / eps

    I4 = -float(np.mean(np.sum(w * e_field(x), axis=1)))

    phi_ee = cfg.comm.value(r_ee)
    y, u_lim = u_field.x, u_field.v
    M = y.shape[0]
    phi_el = cfg.comm.value(pair_displacements(cfg.domain, x, y))
    term_eps = (phi_ee @ u_eps - phi_ee.sum(axis=1)[:, None] * u_eps) / N
    term_lim = (phi_el @ u_lim - phi_el.sum(axis=1)[:, None] * u_eps) / M
    I5 = float(np.mean(np.sum(w * (term_eps - term_lim), axis=1))) / eps

    dw = w[:, None, :] - w[None, :, :]
    align = float(np.sum(phi_ee * np.sum(dw * dw, axis=-1)) / (2.0 * N * N))
    rel = float(np.mean(np.sum(w * w, axis=1)))
    return RelativeEntropyBreakdown(state_eps.time, rel, I2, I3, I4, I5, align)


def breakdown_series(traj_eps: Trajectory, traj_limit: Trajectory, cfg: SimConfig, h: float = 1e-4,
                     coulomb_mode: str = "empirical") -> list:
    """Breakdown at every interior snapshot shared by the two runs."""
    _check_grids(traj_eps, traj_limit)
    L = traj_limit.snapshots
    fields = [LimitField(s.positions, s.velocities, cfg, coulomb_mode) for s in L]
    out = []
    for k in range(1, len(L) - 1):
        e_field = MaterialDerivative(fields[k - 1], fields[k], fields[k + 1], L[k - 1].time, L[k + 1].time, h)
        out.append(entropy_breakdown(traj_eps.snapshots[k], fields[k], e_field, cfg, h))
    return out


def _check_grids(traj_a: Trajectory, traj_b: Trajectory) -> None:
    ta, tb = traj_a.times, traj_b.times
    if ta.shape != tb.shape or not np.allclose(ta, tb, rtol=0, atol=1e-12):
        raise AlignmentError("trajectories do not share snapshot times")


def _midpoint_cdf_at(sources: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Empirical CDF of ``sources`` at ``pts``, taking the midpoint of each jump."""
    xs = np.sort(sources)
    lo = np.searchsorted(xs, pts, side="left")
    hi = np.searchsorted(xs, pts, side="right")
    return (lo + hi) / (2.0 * len(xs))


def coulomb_energy_rate_1d(x_eps, v_eps, x_lim, v_lim) -> float:
    """``int gradW * (rho - rho_eps) . (rho u - rho_eps u_eps) dx`` for ``W = -|x|/2``.

    In 1-D, ``gradW * (rho - rho_eps) = F_eps - F_rho``, evaluated at the atoms
    with the midpoint convention.
    """
    x_eps, v_eps = np.ravel(x_eps), np.ravel(v_eps)
    x_lim, v_lim = np.ravel(x_lim), np.ravel(v_lim)

    def G(p):
        return _midpoint_cdf_at(x_eps, p) - _midpoint_cdf_at(x_lim, p)

    return float(np.mean(G(x_lim) * v_lim) - np.mean(G(x_eps) * v_eps))


def coulomb_identity_residual(traj_eps: Trajectory, traj_limit: Trajectory) -> np.ndarray:
    """Residual of the modulated Coulomb energy identity on each snapshot interval.

    ``residual_k = |(E_{k+1} - E_k) / (2 dt) - R_k|`` with ``E`` the Cramér
    energy and ``R_k`` the flux pairing evaluated at the interval midpoint
    (average of the endpoint states).
    """
    from .transport import EmpiricalMeasure, cramer_energy_1d

    cfg = traj_eps.config
    if cfg.domain.dim != 1 or cfg.kernel.family != "coulomb_1d":
        raise UnsupportedError("the modulated-energy identity is checked for coulomb_1d in one dimension")
    _check_grids(traj_eps, traj_limit)
    A, B = traj_eps.snapshots, traj_limit.snapshots
    energy = np.array([
        cramer_energy_1d(EmpiricalMeasure.uniform(a.positions), EmpiricalMeasure.uniform(b.positions))
        for a, b in zip(A, B)
    ])
    out = np.empty(len(A) - 1)
    for k in range(len(A) - 1):
        dt = A[k + 1].time - A[k].time
        rate = coulomb_energy_rate_1d(
            0.5 * (A[k].positions + A[k + 1].positions), 0.5 * (A[k].velocities + A[k + 1].velocities),
            0.5 * (B[k].positions + B[k + 1].positions), 0.5 * (B[k].velocities + B[k + 1].velocities),
        )
        out[k] = abs(0.5 * (energy[k + 1] - energy[k]) / dt - rate)
    return out
