import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhe_soc.exceptions import NonFiniteObjective
from mhe_soc.optim import SimplexOptions, initial_simplex, minimize


def test_one_dimensional_minimizer():
    res = minimize(lambda x: (x[0] - 1.0) ** 2, [0.0], SimplexOptions(max_iterations=200))
    assert abs(res.x_best[0] - 1.0) < 1e-6


def test_flat_landscape_returns_x0():
    x0 = np.array([0.3, -2.0, 5.0])
    res = minimize(lambda x: 4.0, x0, SimplexOptions(max_iterations=1))
    assert np.array_equal(res.x_best, x0)
    assert res.f_best == 4.0


@pytest.mark.parametrize("n", [1, 2, 5, 14])
def test_single_iteration_budget(n):
    rng = np.random.default_rng(n)
    center = rng.normal(size=n)
    res = minimize(lambda x: float(np.sum((x - center) ** 2)), rng.normal(size=n), SimplexOptions(max_iterations=1))
    assert res.iterations_used == 1
    assert res.evaluations <= n + 3


def test_fminsearch_initial_simplex():
    simplex = initial_simplex(np.array([2.0, 0.0]), SimplexOptions())
    np.testing.assert_allclose(simplex, [[2.0, 0.0], [2.1, 0.0], [2.0, 0.00025]])


def test_explicit_simplex():
    f = lambda x: float(np.sum(x**2))
    start = np.array([[1.0, 1.0], [1.5, 1.0], [1.0, 1.5]])
    res = minimize(f, start[0], SimplexOptions(max_iterations=0), simplex=start)
    assert res.evaluations == 3
    with pytest.raises(ValueError):
        minimize(f, [1.0, 1.0], simplex=np.zeros((2, 2)))


def test_non_finite_objective():
    with pytest.raises(NonFiniteObjective):
        minimize(lambda x: float("nan"), [1.0])


def test_barrier_values_are_finite():
    res = minimize(lambda x: 1e5 if x[0] < 0 else x[0] ** 2, [0.5], SimplexOptions(max_iterations=50))
    assert res.f_best < 1e5


def test_deterministic():
    f = lambda x: float((x[0] - 3) ** 2 + 10 * (x[1] + 1) ** 2 + x[0] * x[1])
    a = minimize(f, [0.1, 0.2], SimplexOptions(max_iterations=40))
    b = minimize(f, [0.1, 0.2], SimplexOptions(max_iterations=40))
    assert np.array_equal(a.x_best, b.x_best)
    assert (a.f_best, a.iterations_used, a.evaluations) == (b.f_best, b.iterations_used, b.evaluations)


@pytest.mark.parametrize("seed", range(3))
def test_convex_quadratic_14d(seed):
    rng = np.random.default_rng(seed)
    n = 14
    m = rng.normal(size=(n, n))
    h = m @ m.T / n + np.eye(n)
    xstar = rng.normal(size=n)
    f = lambda x: float((x - xstar) @ h @ (x - xstar))
    res = minimize(f, np.zeros(n) + 0.5, SimplexOptions(max_iterations=20000))
    assert np.max(np.abs(res.x_best - xstar)) < 1e-4


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_best_seen_monotone_in_budget(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=n)
    b = rng.uniform(0.1, 3, size=n)
    f = lambda x: float(np.sum(b * np.abs(x - a) ** 1.5) + np.sin(3 * x).sum())
    x0 = rng.normal(size=n)
    previous = np.inf
    for k in range(0, 30, 3):
        res = minimize(f, x0, SimplexOptions(max_iterations=k))
        assert res.f_best <= previous
        previous = res.f_best


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31 - 1), st.integers(0, 10))
def test_best_seen_is_min_of_evaluated(n, seed, k):
    rng = np.random.default_rng(seed)
    seen = []

    def f(x):
        value = float(np.sum(np.cos(x * 2.3) + 0.1 * x**2))
        seen.append(value)
        return value

    res = minimize(f, rng.normal(size=n), SimplexOptions(max_iterations=k))
    assert res.f_best == min(seen)
    assert res.evaluations == len(seen)
