"""Interaction potentials, communication weights and domain geometry.

All objects here are immutable; every evaluator accepts arrays of
displacements with a trailing axis of length ``dim`` and broadcasts over the
leading axes.

The 1-D Coulomb potential uses the fundamental-solution convention
``W(x) = -|x|/2`` (so that ``-W'' = delta``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple

import numpy as np

from .errors import ConfigError, SingularityError, UnsupportedError

INTERACTION_FAMILIES = ("gaussian", "morse_smoothed", "coulomb_1d", "coulomb_2d", "coulomb_3d", "zero")
COMM_FAMILIES = ("constant", "cucker_smale")
COULOMB_DIM = {"coulomb_1d": 1, "coulomb_2d": 2, "coulomb_3d": 3}

_KERNEL_DEFAULTS = {
    "gaussian": {"amplitude": -1.0, "length": 1.0},
    "morse_smoothed": {"c_rep": 1.0, "l_rep": 0.5, "c_att": 2.0, "l_att": 1.5, "core": 0.25},
    "coulomb_1d": {},
    "coulomb_2d": {},
    "coulomb_3d": {},
    "zero": {},
}


class KernelConstants(NamedTuple):
    sup_norm: float
    lip_const: float | None  # None when no finite Lipschitz constant exists


@dataclass(frozen=True)
class Domain:
    kind: str = "euclidean"
    dim: int = 1
    period: float | None = None

    def __post_init__(self):
        if self.kind not in ("euclidean", "torus"):
            raise ConfigError(f"unknown domain kind {self.kind!r}")
        if int(self.dim) != self.dim or self.dim < 1:
            raise ConfigError(f"dimension must be a positive integer, got {self.dim!r}")
        if self.kind == "torus":
            if self.period is None or not self.period > 0:
                raise ConfigError("torus period must be strictly positive")

    @property
    def is_torus(self) -> bool:
        return self.kind == "torus"

    def displacement(self, x, y) -> np.ndarray:
        """``x - y``; on the torus, the minimum image in ``(-L/2, L/2]``."""
        r = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        if self.is_torus:
            L = self.period
            # ceil(s - 1/2) rounds ties downward, which keeps +L/2 and maps -L/2 to +L/2
            r = r - L * np.ceil(r / L - 0.5)
        return r

    def wrap(self, positions) -> np.ndarray:
        positions = np.asarray(positions, dtype=float)
        if self.is_torus:
            positions = np.mod(positions, self.period)
            # np.mod can return exactly L for tiny negative inputs
            positions[positions >= self.period] = 0.0
        return positions


def _norm(r: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(r * r, axis=-1))


@dataclass(frozen=True)
class InteractionKernel:
    family: str = "zero"
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in INTERACTION_FAMILIES:
            raise ConfigError(f"unknown interaction family {self.family!r}")
        merged = dict(_KERNEL_DEFAULTS[self.family])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ConfigError(f"unknown parameters for {self.family}: {sorted(unknown)}")
        merged.update({k: float(v) for k, v in self.params.items()})
        if self.family == "gaussian" and not merged["length"] > 0:
            raise ConfigError("gaussian length must be positive")
        if self.family == "morse_smoothed":
            for key in ("c_rep", "l_rep", "c_att", "l_att", "core"):
                if not merged[key] > 0:
                    raise ConfigError(f"morse_smoothed parameter {key} must be positive")
        object.__setattr__(self, "params", merged)

    @property
    def is_coulomb(self) -> bool:
        return self.family in COULOMB_DIM

    @property
    def is_regular(self) -> bool:
        return not self.is_coulomb

    def check_domain(self, domain: Domain) -> None:
        if self.is_coulomb:
            if domain.is_torus:
                raise UnsupportedError("Coulomb kernels are not supported on the torus")
            if domain.dim != COULOMB_DIM[self.family]:
                raise ConfigError(f"{self.family} requires dimension {COULOMB_DIM[self.family]}")

    def value(self, r) -> np.ndarray:
        """W(r). Coulomb families in d >= 2 return ``inf``/``-inf`` at the origin."""
        r = np.asarray(r, dtype=float)
        s = _norm(r)
        p = self.params
        if self.family == "zero":
            return np.zeros(s.shape)
        if self.family == "gaussian":
            return p["amplitude"] * np.exp(-(s / p["length"]) ** 2)
        if self.family == "morse_smoothed":
            q = np.sqrt(s * s + p["core"] ** 2)
            return p["c_rep"] * np.exp(-q / p["l_rep"]) - p["c_att"] * np.exp(-q / p["l_att"])
        if self.family == "coulomb_1d":
            return -0.5 * s
        with np.errstate(divide="ignore"):
            if self.family == "coulomb_2d":
                return -np.log(s) / (2.0 * math.pi)
            return 1.0 / (4.0 * math.pi * s)

    def grad(self, r, at_origin: str = "raise") -> np.ndarray:
        """Gradient of W at displacement(s) ``r``.

        ``at_origin`` controls Coulomb families at ``r = 0``: ``"raise"`` or
        ``"zero"`` (the midpoint-of-jump convention used for 1-D particles).
        """
        r = np.asarray(r, dtype=float)
        s = _norm(r)[..., None]
        p = self.params
        if self.family == "zero":
            return np.zeros(r.shape)
        if self.family == "gaussian":
            ell2 = p["length"] ** 2
            return -2.0 * p["amplitude"] / ell2 * r * np.exp(-(s * s) / ell2)
        if self.family == "morse_smoothed":
            q = np.sqrt(s * s + p["core"] ** 2)
            dW = -p["c_rep"] / p["l_rep"] * np.exp(-q / p["l_rep"]) + p["c_att"] / p["l_att"] * np.exp(-q / p["l_att"])
            return dW * r / q
        zero = s[..., 0] == 0.0
        if np.any(zero) and at_origin == "raise":
            idx = np.argwhere(zero)
            raise SingularityError(f"{self.family} gradient is singular at r = 0", indices=idx)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.family == "coulomb_1d":
                g = -0.5 * np.sign(r)
            elif self.family == "coulomb_2d":
                g = -r / (2.0 * math.pi * s * s)
            else:
                g = -r / (4.0 * math.pi * s**3)
        g = np.where(zero[..., None], 0.0, g)
        return g

    def hessian_norm_bound(self) -> float | None:
        return kernel_constants(self).lip_const


@dataclass(frozen=True)
class CommWeight:
    family: str = "constant"
    K: float = 0.0
    beta: float = 0.0

    def __post_init__(self):
        if self.family not in COMM_FAMILIES:
            raise ConfigError(f"unknown communication weight family {self.family!r}")
        if not self.K >= 0:
            raise ConfigError("communication amplitude K must be >= 0")
        if not self.beta >= 0:
            raise ConfigError("communication exponent beta must be >= 0")

    def value(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.family == "constant" or self.K == 0.0:
            return np.full(r.shape[:-1], float(self.K))
        s2 = np.sum(r * r, axis=-1)
        return self.K / (1.0 + s2) ** self.beta

    @property
    def sup(self) -> float:
        return float(self.K)

    @property
    def lip(self) -> float:
        return kernel_constants(self).lip_const


def kernel_constants(obj) -> KernelConstants:
    """Certified ``(sup, Lipschitz)`` constants.

    For an :class:`InteractionKernel` these refer to the gradient of W (the
    quantity entering the forces); for a :class:`CommWeight`, to the weight.
    """
    if isinstance(obj, CommWeight):
        if obj.family == "constant" or obj.beta == 0.0 or obj.K == 0.0:
            return KernelConstants(float(obj.K), 0.0)
        b = obj.beta
        r2 = 1.0 / (2.0 * b + 1.0)  # maximiser of |d/dr (1+r^2)^-b|
        lip = 2.0 * obj.K * b * math.sqrt(r2) * (1.0 + r2) ** (-b - 1.0)
        return KernelConstants(float(obj.K), lip)
    if not isinstance(obj, InteractionKernel):
        raise TypeError(f"expected InteractionKernel or CommWeight, got {type(obj).__name__}")
    p = obj.params
    if obj.family == "zero":
        return KernelConstants(0.0, 0.0)
    if obj.family == "gaussian":
        a, ell = abs(p["amplitude"]), p["length"]
        return KernelConstants(a * math.sqrt(2.0) * math.exp(-0.5) / ell, 2.0 * a / ell**2)
    if obj.family == "morse_smoothed":
        first = p["c_rep"] / p["l_rep"] + p["c_att"] / p["l_att"]
        second = p["c_rep"] / p["l_rep"] ** 2 + p["c_att"] / p["l_att"] ** 2
        # Hessian eigenvalues are convex combinations of W''(q) and W'(q)/q
        return KernelConstants(first, max(second, first / p["core"]))
    if obj.family == "coulomb_1d":
        return KernelConstants(0.5, None)
    raise UnsupportedError(f"{obj.family} has no finite sup of the gradient")


def grad_W(kernel: InteractionKernel, domain: Domain, r) -> np.ndarray:
    kernel.check_domain(domain)
    r = np.asarray(r, dtype=float)
    if domain.is_torus:
        r = domain.displacement(r, np.zeros_like(r))
    return kernel.grad(r)


def phi_eval(comm: CommWeight, domain: Domain, r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if domain.is_torus:
        r = domain.displacement(r, np.zeros_like(r))
    return comm.value(r)


def displacement(domain: Domain, x, y) -> np.ndarray:
    return domain.displacement(x, y)


# Pairwise sums used by the particle and limit solvers.


def pair_displacements(domain: Domain, targets, sources) -> np.ndarray:
    """Array ``r[i, j] = targets[i] - sources[j]`` of shape (M, K, d)."""
    targets = np.asarray(targets, dtype=float)
    sources = np.asarray(sources, dtype=float)
    return domain.displacement(targets[:, None, :], sources[None, :, :])


def mean_force_field(kernel: InteractionKernel, r: np.ndarray, self_pairs: bool = False) -> np.ndarray:
    """``(1/K) sum_j grad W(r[i, j])`` for a displacement table ``r``.

    With ``self_pairs`` the table is square and its diagonal holds particle
    self-interactions, which are dropped for Coulomb kernels. Coincident
    off-diagonal pairs raise for Coulomb in d >= 2; in 1-D they use W'(0) = 0.
    """
    K = r.shape[1]
    if kernel.family == "zero":
        return np.zeros((r.shape[0], r.shape[2]))
    if not kernel.is_coulomb:
        return kernel.grad(r).sum(axis=1) / K
    s = _norm(r)
    zero = s == 0.0
    if self_pairs:
        zero[np.diag_indices(min(r.shape[0], K))] = False
    if np.any(zero) and kernel.family != "coulomb_1d":
        raise SingularityError("coincident particles under a Coulomb kernel", indices=np.argwhere(zero))
    return kernel.grad(r, at_origin="zero").sum(axis=1) / K


def pair_potential(kernel: InteractionKernel, r: np.ndarray, self_pairs: bool = False) -> np.ndarray:
    """Matrix ``W(r[i, j])``; the diagonal is zeroed for Coulomb in d >= 2."""
    if kernel.family in ("coulomb_2d", "coulomb_3d"):
        s = _norm(r)
        mask = s == 0.0
        if self_pairs:
            mask[np.diag_indices(min(r.shape[0], r.shape[1]))] = False
        if np.any(mask):
            raise SingularityError("coincident particles under a Coulomb kernel", indices=np.argwhere(mask))
        with np.errstate(divide="ignore"):
            w = kernel.value(r)
        if self_pairs:
            w[np.diag_indices(min(r.shape[0], r.shape[1]))] = 0.0
        return w
    return kernel.value(r)
