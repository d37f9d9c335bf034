"""Wasserstein distances between empirical measures and the 1-D Cramér energy.

Only exact solvers live here: the 1-D quantile formula for arbitrary weights,
optimal assignment for equal-size uniform clouds (any dimension, torus via
minimum-image ground cost), a bottleneck solver for ``p = inf``, and an
exhaustive permutation search used as a reference.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .errors import ConfigError, SizeError, UnsupportedError
from .kernels import Domain

WEIGHT_TOL = 1e-12
BRUTEFORCE_MAX = 8


@dataclass
class EmpiricalMeasure:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        self.points = pts
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if self.weights.shape[0] != pts.shape[0]:
            raise ConfigError("points and weights differ in length")
        if pts.shape[0] == 0:
            raise ConfigError("empty measure")
        if np.any(self.weights <= 0):
            raise ConfigError("weights must be strictly positive")
        if abs(self.weights.sum() - 1.0) > WEIGHT_TOL:
            raise ConfigError(f"weights sum to {self.weights.sum()!r}, not 1")

    @classmethod
    def uniform(cls, points) -> "EmpiricalMeasure":
        pts = np.asarray(points, dtype=float)
        M = pts.shape[0]
        return cls(pts, np.full(M, 1.0 / M))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0])) or np.allclose(self.weights, 1.0 / self.size, rtol=0,
                                                                         atol=1e-15)


@dataclass
class Coupling:
    """Transport plan as (source, target, mass) triples."""

    pairs: list

    def marginals(self, m: int, n: int):
        a, b = np.zeros(m), np.zeros(n)
        for i, j, w in self.pairs:
            a[i] += w
            b[j] += w
        return a, b


def _check_p(p: float) -> None:
    if not p >= 1 or math.isinf(p):
        raise ConfigError(f"p must lie in [1, inf), got {p!r}")


def _check_uniform_pair(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> None:
    if mu.size != nu.size:
        raise UnsupportedError(f"assignment needs equal cardinality ({mu.size} vs {nu.size})")
    if not (mu.is_uniform() and nu.is_uniform()):
        raise UnsupportedError("assignment needs uniform weights")
    if mu.dim != nu.dim:
        raise ConfigError("measures live in different dimensions")


def _ground_distance(mu, nu, domain: Domain | None) -> np.ndarray:
    domain = domain or Domain("euclidean", mu.dim)
    r = domain.displacement(mu.points[:, None, :], nu.points[None, :, :])
    return np.sqrt(np.sum(r * r, axis=-1))


def wasserstein_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float = 1.0) -> float:
    """Exact ``d_p`` on the line via the quantile functions.

    ``d_p^p = int_0^1 |F_mu^{-1}(s) - F_nu^{-1}(s)|^p ds``; both quantile
    functions are piecewise constant, so the integral is a finite sum over the
    merged cumulative-weight breakpoints.
    """
    _check_p(p)
    if mu.dim != 1 or nu.dim != 1:
        raise UnsupportedError("wasserstein_1d needs one-dimensional measures")
    ia = np.argsort(mu.points[:, 0], kind="stable")
    ib = np.argsort(nu.points[:, 0], kind="stable")
    xa, wa = mu.points[ia, 0], mu.weights[ia]
    xb, wb = nu.points[ib, 0], nu.weights[ib]
    if len(xa) == len(xb) and np.array_equal(wa, wb):
        # common breakpoints: plain sorted matching
        return float(np.sum(wa * np.abs(xa - xb) ** p) ** (1.0 / p))
    ca = np.cumsum(wa)
    cb = np.cumsum(wb)
    ca[-1] = cb[-1] = 1.0
    levels = np.union1d(ca, cb)
    ds = np.diff(np.concatenate(([0.0], levels)))
    # quantile on (s_{k-1}, s_k]: first index with cumulative weight >= s_k
    qa = xa[np.minimum(np.searchsorted(ca, levels, side="left"), len(xa) - 1)]
    qb = xb[np.minimum(np.searchsorted(cb, levels, side="left"), len(xb) - 1)]
    keep = ds > 0
    return float(np.sum(ds[keep] * np.abs(qa[keep] - qb[keep]) ** p) ** (1.0 / p))


def optimal_assignment(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float = 2.0, domain: Domain | None = None):
    """Optimal permutation ``sigma`` for the ``|x - y|^p`` cost."""
    _check_p(p)
    _check_uniform_pair(mu, nu)
    dist = _ground_distance(mu, nu, domain)
    rows, cols = linear_sum_assignment(dist**p)
    sigma = np.empty(mu.size, dtype=int)
    sigma[rows] = cols
    return sigma, dist


def wasserstein_assignment(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float = 2.0,
                           domain: Domain | None = None) -> float:
    sigma, dist = optimal_assignment(mu, nu, p, domain)
    costs = dist[np.arange(mu.size), sigma] ** p
    return float((np.sum(costs) / mu.size) ** (1.0 / p))


def coupling_from_assignment(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float = 2.0,
                             domain: Domain | None = None) -> Coupling:
    sigma, _ = optimal_assignment(mu, nu, p, domain)
    return Coupling([(i, int(sigma[i]), float(mu.weights[i])) for i in range(mu.size)])


def wasserstein_bruteforce(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float = 2.0,
                           domain: Domain | None = None) -> float:
    """Minimum over all ``M!`` permutations (reference implementation)."""
    _check_p(p)
    _check_uniform_pair(mu, nu)
    M = mu.size
    if M > BRUTEFORCE_MAX:
        raise SizeError(f"brute force limited to M <= {BRUTEFORCE_MAX}, got {M}")
    cost = _ground_distance(mu, nu, domain) ** p
    idx = np.arange(M)
    best = math.inf
    best_perm = None
    for perm in itertools.permutations(range(M)):
        c = cost[idx, list(perm)].sum()
        if c < best:
            best, best_perm = c, perm
    # summed the same way as the assignment solver so equal permutations give equal floats
    return float((np.sum(cost[idx, list(best_perm)]) / M) ** (1.0 / p))


def bottleneck_bruteforce(mu: EmpiricalMeasure, nu: EmpiricalMeasure, domain: Domain | None = None) -> float:
    _check_uniform_pair(mu, nu)
    if mu.size > BRUTEFORCE_MAX:
        raise SizeError(f"brute force limited to M <= {BRUTEFORCE_MAX}, got {mu.size}")
    dist = _ground_distance(mu, nu, domain)
    idx = np.arange(mu.size)
    return float(min(dist[idx, list(perm)].max() for perm in itertools.permutations(range(mu.size))))


def wasserstein_inf(mu: EmpiricalMeasure, nu: EmpiricalMeasure, domain: Domain | None = None) -> float:
    """Bottleneck value ``min_sigma max_i |x_i - y_sigma(i)|``.

    Binary search over the sorted candidate distances; feasibility of a radius
    is a perfect matching in the threshold graph.
    """
    _check_uniform_pair(mu, nu)
    dist = _ground_distance(mu, nu, domain)
    M = mu.size
    cand = np.unique(dist)
    lo, hi = 0, len(cand) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        graph = csr_matrix(dist <= cand[mid])
        match = maximum_bipartite_matching(graph, perm_type="column")
        if np.all(match >= 0) and len(match) == M:
            hi = mid
        else:
            lo = mid + 1
    return float(cand[lo])


def _merged_cdfs(mu: EmpiricalMeasure, nu: EmpiricalMeasure):
    if mu.dim != 1 or nu.dim != 1:
        raise UnsupportedError("Cramér energy is implemented for one-dimensional measures only")
    xs = np.union1d(mu.points[:, 0], nu.points[:, 0])

    def cdf(m):
        order = np.argsort(m.points[:, 0], kind="stable")
        xm, cw = m.points[order, 0], np.cumsum(m.weights[order])
        idx = np.searchsorted(xm, xs, side="right") - 1
        return np.where(idx >= 0, cw[np.maximum(idx, 0)], 0.0)

    return xs, cdf(mu), cdf(nu)


def cramer_energy_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """``int (F_mu - F_nu)^2 dx`` for 1-D measures, exact.

    The CDF difference is constant between merged breakpoints and vanishes
    outside the merged support.
    """
    xs, Fa, Fb = _merged_cdfs(mu, nu)
    diff = (Fa - Fb)[:-1]
    return float(np.sum(diff * diff * np.diff(xs)))


def _midpoint_cdf(points: np.ndarray):
    xs = np.sort(points)
    M = len(xs)
    return xs, (np.arange(M) + 0.5) / M


def cramer_energy_1d_linear(mu: EmpiricalMeasure, nu: EmpiricalMeasure, n_quad: int = 8) -> float:
    """Cramér energy between the piecewise-linear CDF reconstructions.

    Each uniform point cloud is replaced by the continuous CDF interpolating the
    jump midpoints ``(k - 1/2)/M`` at the sorted points, constant outside. The
    integrand is piecewise quadratic, so Gauss-Legendre with 2 nodes per merged
    interval is exact; ``n_quad`` is kept for safety.
    """
    if mu.dim != 1 or nu.dim != 1:
        raise UnsupportedError("Cramér energy is implemented for one-dimensional measures only")
    if not (mu.is_uniform() and nu.is_uniform()) or mu.size != nu.size:
        raise UnsupportedError("the linear CDF reconstruction needs uniform weights and equal sizes")
    xa, Fa = _midpoint_cdf(mu.points[:, 0])
    xb, Fb = _midpoint_cdf(nu.points[:, 0])
    xs = np.union1d(xa, xb)
    if len(xs) < 2:
        return 0.0
    nodes, wts = np.polynomial.legendre.leggauss(n_quad)
    a, b = xs[:-1], xs[1:]
    half = 0.5 * (b - a)
    q = (0.5 * (a + b))[:, None] + half[:, None] * nodes[None, :]
    diff = np.interp(q, xa, Fa) - np.interp(q, xb, Fb)
    return float(np.sum(half[:, None] * wts[None, :] * diff * diff))
