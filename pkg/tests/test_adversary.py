import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drbo.adversary import (AdversaryProblem, SolverError, brute_force_oracle, feasible,
                            simplex_lattice, solve, solve_batch)
from drbo.kernels import InvalidInputError, KernelSpec, context_gram, unit_grid


def _problem(v, w, eps, M=None):
    return AdversaryProblem(np.asarray(v, float), np.asarray(w, float), eps,
                            np.eye(len(w)) if M is None else M)


def _random_instance(rng, n):
    A = rng.normal(size=(n, n))
    M = A @ A.T / n + 1e-3 * np.eye(n)
    return rng.normal(size=n) * rng.uniform(0.1, 3), rng.dirichlet(np.ones(n)), rng.uniform(0, 2), M


def test_zero_radius_returns_reference():
    sol = solve(_problem([3.0, -1.0, 2.0], [0.2, 0.5, 0.3], 0.0))
    np.testing.assert_array_equal(sol.weights, [0.2, 0.5, 0.3])
    assert sol.value == pytest.approx(0.6 - 0.5 + 0.6)


def test_large_radius_reaches_vertex():
    sol = solve(_problem([0.0, 1.0], [0.5, 0.5], math.sqrt(0.5)))
    np.testing.assert_allclose(sol.weights, [1.0, 0.0], atol=1e-5)
    assert sol.value == pytest.approx(0.0, abs=2e-6)


def test_small_radius_hand_solution():
    sol = solve(_problem([0.0, 1.0], [0.5, 0.5], 0.1))
    step = 0.1 / math.sqrt(2)
    np.testing.assert_allclose(sol.weights, [0.5 + step, 0.5 - step], atol=1e-5)
    assert sol.value == pytest.approx(0.5 - step, abs=2e-6)
    assert sol.value == pytest.approx(0.42929, abs=1e-5)


def test_constant_values():
    for eps in (0.0, 0.3, 5.0):
        assert solve(_problem([1.7, 1.7, 1.7], [0.1, 0.6, 0.3], eps)).value == pytest.approx(1.7)


@pytest.mark.parametrize("v,w,eps", [([0.0, 1.0], [0.5, 0.5], math.sqrt(0.5)),
                                     ([0.0, 1.0], [0.5, 0.5], 0.1),
                                     ([2.0, -1.0, 0.5], [0.3, 0.3, 0.4], 0.0)])
def test_oracle_agrees_on_examples(v, w, eps):
    p = _problem(v, w, eps)
    n = len(w)
    bound = 0.01 * n * max(abs(x) for x in v) + 1e-6
    assert abs(solve(p).value - brute_force_oracle(p, 0.01).value) <= bound


def test_oracle_refinement_and_guard():
    p = _problem([0.3, -0.2, 0.9], [0.2, 0.5, 0.3], 0.2)
    assert brute_force_oracle(p, 0.05).value <= brute_force_oracle(p, 0.1).value + 1e-12
    with pytest.raises(InvalidInputError):
        brute_force_oracle(_problem(np.zeros(5), np.full(5, 0.2), 0.1), 0.1)


def test_oracle_zero_radius_nearest_point():
    p = _problem([1.0, 2.0], [0.333, 0.667], 0.0)
    np.testing.assert_allclose(brute_force_oracle(p, 0.01).weights, [0.33, 0.67])


def test_simplex_lattice():
    L = simplex_lattice(3, 0.5)
    assert len(L) == 6
    np.testing.assert_allclose(L.sum(1), 1.0)
    with pytest.raises(InvalidInputError):
        simplex_lattice(3, 0.3)


def test_invalid_inputs():
    with pytest.raises(InvalidInputError):
        _problem([1.0], [0.5, 0.5], 0.1)
    with pytest.raises(InvalidInputError):
        _problem([1.0, 2.0], [0.5, 0.5], -0.1)
    with pytest.raises(InvalidInputError):
        solve_batch([[1.0, 2.0]], [0.7, 0.7], 0.1, np.eye(2))


def test_oracle_agreement_within_lattice_error(rng):
    # the lattice optimum can only be worse than the continuous one, by at most
    # resolution * n * max|v|
    for _ in range(60):
        n = int(rng.integers(2, 5))
        v, w, eps, M = _random_instance(rng, n)
        p = AdversaryProblem(v, w, eps, M)
        exact, lattice = solve(p).value, brute_force_oracle(p, 0.01).value
        assert exact <= lattice + 1e-6 * (np.ptp(v) + 1)
        assert lattice - exact <= 0.01 * n * np.abs(v).max() + 1e-6


def test_matches_conic_solver(rng):
    cp = pytest.importorskip("cvxpy")
    n = 30
    c = unit_grid(n)
    M = context_gram(KernelSpec(), c).entries
    L = np.linalg.cholesky(M)
    for eps in (0.01, 0.1, 0.6):
        v = rng.normal(size=n)
        w = rng.dirichlet(np.ones(n))
        x = cp.Variable(n)
        prob = cp.Problem(cp.Minimize(v @ x), [x >= 0, cp.sum(x) == 1, cp.norm(L.T @ (x - w)) <= eps])
        prob.solve(solver=cp.CLARABEL)
        sol = solve(AdversaryProblem(v, w, eps, M))
        assert sol.value == pytest.approx(prob.value, abs=1e-6 * (np.ptp(v) + 1) + 1e-6)


def test_batch_matches_single(rng):
    n = 12
    M = context_gram(KernelSpec(), unit_grid(n)).entries
    V = rng.normal(size=(5, n))
    w = rng.dirichlet(np.ones(n))
    W, vals, gaps, _ = solve_batch(V, w, 0.3, M)
    for i in range(5):
        single = solve(AdversaryProblem(V[i], w, 0.3, M))
        assert vals[i] == pytest.approx(single.value, abs=2e-6 * (np.ptp(V[i]) + 1))
        assert feasible(W[i], w, 0.3, M)


def test_solver_error_carries_iterate(monkeypatch):
    import drbo.adversary as adv
    monkeypatch.setattr(adv, "MAX_ITER", 1)
    with pytest.raises(SolverError) as info:
        adv.solve(_problem([0.0, 1.0, 3.0], [0.2, 0.3, 0.5], 0.3), tol=1e-12)
    assert info.value.weights is not None and info.value.gap is not None


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 10), st.integers(0, 2**31))
def test_feasibility_bounds_and_gap(n, seed):
    rng = np.random.default_rng(seed)
    v, w, eps, M = _random_instance(rng, n)
    sol = solve(AdversaryProblem(v, w, eps, M))
    assert feasible(sol.weights, w, eps, M)
    assert sol.dual_gap <= 1e-6 * (np.ptp(v) + 1) + 1e-12
    assert v.min() - 1e-9 <= sol.value <= v @ w + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31))
def test_monotone_in_radius(n, seed):
    rng = np.random.default_rng(seed)
    v, w, _, M = _random_instance(rng, n)
    radii = [0.0, 0.05, 0.2, 0.5, 1.5]
    _, vals, _, _ = zip(*[solve_batch(v[None], w, r, M) for r in radii])
    vals = [float(x[0]) for x in vals]
    tol = 2e-6 * (np.ptp(v) + 1)
    assert all(b <= a + tol for a, b in zip(vals, vals[1:]))


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31), st.floats(0.0, 1.0))
def test_sandwich(n, seed, width):
    rng = np.random.default_rng(seed)
    f, w, eps, M = _random_instance(rng, n)
    half = width * rng.random(n)
    lo, mid, hi = (solve(AdversaryProblem(v, w, eps, M)).value for v in (f - half, f, f + half))
    tol = 2e-6 * (np.ptp(f) + 2 * width + 1)
    assert lo <= mid + tol and mid <= hi + tol
