import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import trapezoid
from scipy.optimize import linprog

from eulalign.errors import ConfigError, SizeError, UnsupportedError
from eulalign.kernels import Domain
from eulalign.transport import (
    EmpiricalMeasure, bottleneck_bruteforce, coupling_from_assignment, cramer_energy_1d, cramer_energy_1d_linear,
    wasserstein_1d, wasserstein_assignment, wasserstein_bruteforce, wasserstein_inf,
)

U = EmpiricalMeasure.uniform


def lp_wasserstein(mu, nu, p):
    """Transport linear program solved by HiGHS (independent oracle for general weights)."""
    C = np.abs(mu.points[:, None, 0] - nu.points[None, :, 0]) ** p
    m, n = C.shape
    A = np.zeros((m + n, m * n))
    for i in range(m):
        A[i, i * n:(i + 1) * n] = 1
    for j in range(n):
        A[m + j, j::n] = 1
    res = linprog(C.ravel(), A_eq=A, b_eq=np.concatenate([mu.weights, nu.weights]), bounds=(0, None),
                  method="highs")
    return res.fun ** (1 / p)


def random_weights(rng, m):
    w = rng.uniform(0.1, 1.0, m)
    return w / w.sum()


def test_one_dimensional_examples():
    assert wasserstein_1d(U([0.0]), U([1.0]), 3.0) == 1.0
    assert wasserstein_1d(U([0.0, 1.0]), U([0.5, 1.5]), 1.0) == pytest.approx(0.5)
    mu = EmpiricalMeasure([0.1, 0.7, 0.2], [0.2, 0.5, 0.3])
    assert wasserstein_1d(mu, mu, 2.0) == 0.0


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 3.0])
def test_quantile_formula_against_transport_lp(p, rng):
    for _ in range(20):
        m, n = rng.integers(1, 9, 2)
        mu = EmpiricalMeasure(rng.normal(size=m), random_weights(rng, m))
        nu = EmpiricalMeasure(rng.normal(size=n), random_weights(rng, n))
        assert wasserstein_1d(mu, nu, p) == pytest.approx(lp_wasserstein(mu, nu, p), rel=1e-7, abs=1e-9)


def test_assignment_matches_quantile_formula(rng):
    for _ in range(50):
        M = int(rng.integers(1, 33))
        mu, nu = U(rng.normal(size=M)), U(rng.normal(size=M))
        for p in (1.0, 2.0):
            assert abs(wasserstein_assignment(mu, nu, p) - wasserstein_1d(mu, nu, p)) <= 1e-12


def test_assignment_matches_bruteforce(rng):
    # distinct optimal permutations (common for p = 1 on the line) may differ in the last bits
    for _ in range(40):
        M, d = int(rng.integers(1, 8)), int(rng.integers(1, 3))
        mu, nu = U(rng.normal(size=(M, d))), U(rng.normal(size=(M, d)))
        for p in (1.0, 2.0):
            a, b = wasserstein_assignment(mu, nu, p), wasserstein_bruteforce(mu, nu, p)
            assert abs(a - b) <= 1e-14 * max(1.0, b)


def test_bruteforce_examples():
    # crossing pair: the straight matching beats the crossed one
    mu, nu = U([[0.0, 0.0], [1.0, 0.0]]), U([[0.0, 1.0], [1.0, 1.0]])
    assert wasserstein_bruteforce(mu, nu, 2.0) == pytest.approx(1.0)
    mu, nu = U([0.0, 1.0, 2.0]), U([0.5, 1.5, 2.5])
    assert wasserstein_bruteforce(mu, nu, 1.0) == pytest.approx(0.5)
    assert wasserstein_bruteforce(mu, mu, 2.0) == 0.0
    with pytest.raises(SizeError):
        wasserstein_bruteforce(U(np.arange(9.0)), U(np.arange(9.0)))


def test_bottleneck(rng):
    assert wasserstein_inf(U([[0.0, 0.0]]), U([[3.0, 4.0]])) == pytest.approx(5.0)
    for _ in range(30):
        M = int(rng.integers(1, 8))
        mu, nu = U(rng.normal(size=(M, 2))), U(rng.normal(size=(M, 2)))
        winf = wasserstein_inf(mu, nu)
        assert winf == bottleneck_bruteforce(mu, nu)
        for p in (1.0, 2.0, 4.0, 8.0):
            assert wasserstein_assignment(mu, nu, p) <= winf + 1e-12


def test_cramer_examples():
    assert cramer_energy_1d(U([0.0]), U([1.0])) == 1.0
    assert cramer_energy_1d(U([0.0, 2.0]), U([1.0])) == pytest.approx(0.5)
    assert cramer_energy_1d(U([0.3, -1.0]), U([-1.0, 0.3])) == 0.0


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=12), st.lists(st.floats(-10, 10), min_size=1, max_size=12))
def test_cramer_nonnegative_and_zero_iff_equal(a, b):
    e = cramer_energy_1d(U(a), U(b))
    assert e >= 0
    ua, ca = np.unique(a, return_counts=True)
    ub, cb = np.unique(b, return_counts=True)
    same = len(ua) == len(ub) and np.array_equal(ua, ub) and np.array_equal(ca * len(b), cb * len(a))
    if same:
        assert e <= 1e-25
    else:
        assert e > 0


def test_cramer_against_dense_quadrature(rng):
    mu = EmpiricalMeasure(rng.normal(size=5), random_weights(rng, 5))
    nu = EmpiricalMeasure(rng.normal(size=7), random_weights(rng, 7))
    grid = np.linspace(-6, 6, 2_000_001)

    def cdf(m):
        return np.array([m.weights[m.points[:, 0] <= g].sum() for g in grid[::1000]])

    # coarse check of the CDF model, then exact integral on a fine grid
    Fa = np.searchsorted(np.sort(mu.points[:, 0]), grid, side="right")
    fa = np.concatenate(([0.0], np.cumsum(mu.weights[np.argsort(mu.points[:, 0])])))[Fa]
    Fb = np.searchsorted(np.sort(nu.points[:, 0]), grid, side="right")
    fb = np.concatenate(([0.0], np.cumsum(nu.weights[np.argsort(nu.points[:, 0])])))[Fb]
    assert np.allclose(fa[::1000], cdf(mu))
    quad = np.sum((fa - fb)[:-1] ** 2 * np.diff(grid))
    assert cramer_energy_1d(mu, nu) == pytest.approx(quad, abs=1e-5)


def test_linear_cramer_against_fine_grid(rng):
    a, b = np.sort(rng.normal(size=6)), np.sort(rng.normal(size=6))
    grid = np.linspace(min(a[0], b[0]) - 1, max(a[-1], b[-1]) + 1, 400_001)
    levels = (np.arange(6) + 0.5) / 6
    diff = np.interp(grid, a, levels) - np.interp(grid, b, levels)
    ref = trapezoid(diff ** 2, grid)
    assert cramer_energy_1d_linear(U(a), U(b)) == pytest.approx(ref, rel=1e-8)
    # a rigid shift by s smaller than the spacing scales like s^2
    s = 1e-6
    e1 = cramer_energy_1d_linear(U(a), U(a + s))
    e2 = cramer_energy_1d_linear(U(a), U(a + 2 * s))
    assert e2 / e1 == pytest.approx(4.0, rel=1e-4)
    with pytest.raises(UnsupportedError):
        cramer_energy_1d_linear(U(a), U(b[:5]))


@pytest.mark.parametrize("p", [1.0, 2.0])
def test_metric_axioms(p, rng):
    for _ in range(30):
        M, d = int(rng.integers(1, 12)), int(rng.integers(1, 3))
        a, b, c = (U(rng.normal(size=(M, d))) for _ in range(3))
        ab, ba = wasserstein_assignment(a, b, p), wasserstein_assignment(b, a, p)
        assert abs(ab - ba) <= 1e-10
        assert wasserstein_assignment(a, a, p) == 0.0
        assert wasserstein_assignment(a, c, p) <= ab + wasserstein_assignment(b, c, p) + 1e-10


def test_order_in_p(rng):
    for _ in range(30):
        m, n = rng.integers(1, 10, 2)
        mu = EmpiricalMeasure(rng.normal(size=m), random_weights(rng, m))
        nu = EmpiricalMeasure(rng.normal(size=n), random_weights(rng, n))
        vals = [wasserstein_1d(mu, nu, p) for p in (1.0, 1.5, 2.0, 4.0)]
        assert all(x <= y + 1e-12 for x, y in zip(vals, vals[1:]))


def test_kantorovich_rubinstein_lower_bound(rng):
    mu, nu = U(rng.normal(size=20)), U(rng.normal(0.5, 1.5, size=20))
    d1 = wasserstein_1d(mu, nu, 1.0)
    for _ in range(20):
        knots = np.sort(rng.uniform(-5, 5, 8))
        slopes = rng.uniform(-1, 1, 9)
        vals = np.concatenate(([0.0], np.cumsum(slopes[1:-1] * np.diff(knots))))

        def f(x):
            x = x[:, 0]
            inner = np.interp(x, knots, vals)
            return inner + np.where(x < knots[0], slopes[0] * (x - knots[0]), 0.0) \
                + np.where(x > knots[-1], slopes[-1] * (x - knots[-1]), 0.0)

        assert d1 >= abs(np.mean(f(mu.points)) - np.mean(f(nu.points))) - 1e-12


def test_coupling_marginals(rng):
    mu, nu = U(rng.normal(size=(6, 2))), U(rng.normal(size=(6, 2)))
    plan = coupling_from_assignment(mu, nu)
    a, b = plan.marginals(6, 6)
    assert np.array_equal(a, mu.weights) and np.array_equal(b, nu.weights)
    assert all(w > 0 for _, _, w in plan.pairs)


def test_torus_uses_minimum_image():
    dom = Domain("torus", 1, 1.0)
    assert wasserstein_assignment(U([0.05]), U([0.95]), 2.0, dom) == pytest.approx(0.1)


def test_measure_and_parameter_validation():
    with pytest.raises(ConfigError):
        EmpiricalMeasure([0.0, 1.0], [0.5, 0.6])
    with pytest.raises(ConfigError):
        EmpiricalMeasure([0.0, 1.0], [1.0, 0.0])
    with pytest.raises(ConfigError):
        wasserstein_1d(U([0.0]), U([1.0]), 0.5)
    with pytest.raises(UnsupportedError):
        wasserstein_1d(U([[0.0, 1.0]]), U([[1.0, 1.0]]))
    with pytest.raises(UnsupportedError):
        wasserstein_assignment(U([0.0, 1.0]), U([1.0]))
    with pytest.raises(UnsupportedError):
        wasserstein_assignment(EmpiricalMeasure([0.0, 1.0], [0.25, 0.75]), U([1.0, 2.0]))
    with pytest.raises(UnsupportedError):
        cramer_energy_1d(U([[0.0, 1.0]]), U([[1.0, 1.0]]))


def test_bruteforce_equals_explicit_enumeration():
    x = np.array([0.0, 0.4, 1.3])
    y = np.array([1.0, -0.2, 0.5])
    costs = [np.mean(np.abs(x - y[list(s)]) ** 2) for s in itertools.permutations(range(3))]
    assert wasserstein_bruteforce(U(x), U(y), 2.0) == pytest.approx(np.sqrt(min(costs)))
