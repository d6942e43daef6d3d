import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drbo.kernels import InvalidInputError, KernelSpec, gram_matrix, joint_grid, unit_grid
from drbo.posterior import (GridPosterior, Observation, beta, confidence_band, fit, update)

K = KernelSpec()


def _obs(rng, n):
    return [Observation(rng.random(), rng.random(), rng.normal()) for _ in range(n)]


def test_prior():
    m = fit([], K, 0.1, 1.0, 0.1)
    mean, std = m.predict(np.random.default_rng(0).random((4, 2)))
    np.testing.assert_array_equal(mean, 0.0)
    np.testing.assert_array_equal(std, 1.0)


def test_single_observation_hand_values():
    m = fit([Observation(0.3, 0.6, 1.0)], K, 1.0, 1.0, 0.5)
    mean, std = m.predict([[0.3, 0.6]])
    assert mean[0] == pytest.approx(0.5)
    assert std[0] ** 2 == pytest.approx(0.5)


def test_dense_solve_oracle(rng):
    obs = _obs(rng, 3)
    m = fit(obs, K, 0.1, 1.0, 0.1)
    Z = rng.random((5, 2))
    X = np.array([o.point for o in obs])
    y = np.array([o.y for o in obs])
    A = gram_matrix(K, X, jitter=0.0).entries + np.eye(3)
    kz = np.array([[math.exp(-0.5 * np.sum((x - z) ** 2) / 0.04) for z in Z] for x in X])
    mean, std = m.predict(Z)
    np.testing.assert_allclose(mean, kz.T @ np.linalg.solve(A, y), atol=1e-8)
    np.testing.assert_allclose(std ** 2, 1 - np.einsum("ij,ij->j", kz, np.linalg.solve(A, kz)), atol=1e-8)


def test_update_equals_refit(rng):
    obs = _obs(rng, 10)
    m = fit([], K, 0.1, 1.0, 0.1)
    assert np.allclose(update(m, obs[0]).predict([[0.5, 0.5]]), fit(obs[:1], K, 0.1, 1.0, 0.1).predict([[0.5, 0.5]]))
    for o in obs:
        m = update(m, o)
    ref = fit(obs, K, 0.1, 1.0, 0.1)
    Z = rng.random((20, 2))
    for a, b in zip(m.predict(Z), ref.predict(Z)):
        np.testing.assert_allclose(a, b, atol=1e-8)
    assert m.realized_info_gain == pytest.approx(ref.realized_info_gain, abs=1e-8)
    refit = update(fit(obs[:9], K, 0.1, 1.0, 0.1), obs[9], refit=True)
    np.testing.assert_allclose(refit.predict(Z)[0], ref.predict(Z)[0], atol=1e-12)


def test_info_gain_duplicates():
    o = Observation(0.4, 0.4, 0.3)
    m = fit([], K, 0.1, 1.0, 0.1)
    for t in range(1, 6):
        m = update(m, o)
        assert m.realized_info_gain == pytest.approx(np.linalg.slogdet(np.eye(t) + np.ones((t, t)))[1], abs=1e-8)


def test_beta_examples():
    assert beta(fit([], K, 1.0, 1.0, 1.0)) == pytest.approx(1.0)
    assert beta(fit([], K, 1.0, 0.0, math.exp(-2))) == pytest.approx(2.0)
    assert beta(fit([Observation(0.1, 0.1, 0.0)], K, 1.0, 0.0, 1.0)) == pytest.approx(math.sqrt(math.log(2)))
    m = fit([], K, 1.0, 0.0, 1.0)
    assert beta(m, delta_constant=2.0) == pytest.approx(math.sqrt(2 * math.log(2)))


def test_confidence_band():
    m = fit([], K, 1.0, 1.0, 0.1)
    ctx = unit_grid(7)
    band = confidence_band(m, 0.3, ctx)
    b = beta(m)
    np.testing.assert_allclose(band.ucb, b)
    np.testing.assert_allclose(band.lcb, -b)
    m = fit([Observation(0.3, 0.5, 1.0)], K, 1.0, 1.0, 0.1)
    full = confidence_band(m, 0.3, ctx, beta_value=2.0)
    half = confidence_band(m, 0.3, ctx, beta_value=1.0)
    np.testing.assert_allclose(full.ucb - full.lcb, 2 * (half.ucb - half.lcb))
    assert np.all(full.lcb <= full.ucb)


def test_invalid_parameters():
    for args in ((0.0, 1.0, 0.1), (0.1, -1.0, 0.1), (0.1, 1.0, 0.0), (0.1, 1.0, 1.5)):
        with pytest.raises(InvalidInputError):
            fit([], K, *args)
    with pytest.raises(InvalidInputError):
        Observation(0.1, 0.2, float("nan"))


def test_grid_posterior_matches_model(rng):
    grid = joint_grid(unit_grid(6), unit_grid(5))
    gp = GridPosterior(K, grid, 0.1, 1.0, 0.1)
    m = fit([], K, 0.1, 1.0, 0.1)
    for _ in range(15):
        i = rng.integers(len(grid))
        o = Observation(grid[i, 0], grid[i, 1], rng.normal())
        gp, m = gp.update(o), update(m, o)
    for a, b in zip(gp.predict(), m.predict(grid)):
        np.testing.assert_allclose(a, b, atol=1e-8)
    assert gp.realized_info_gain == pytest.approx(m.realized_info_gain, abs=1e-8)
    with pytest.raises(InvalidInputError):
        gp.index_of([0.123, 0.5])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 12))
def test_std_monotone_and_bounded(seed, n):
    rng = np.random.default_rng(seed)
    Z = rng.random((10, 2))
    m = fit([], K, 0.1, 1.0, 0.1)
    prev = m.std(Z)
    gain = 0.0
    for o in _obs(rng, n):
        m = update(m, o)
        s = m.std(Z)
        assert np.all(s <= prev + 1e-12) and np.all(s >= 0) and np.all(s <= 1.0)
        assert m.realized_info_gain >= gain
        prev, gain = s, m.realized_info_gain


def _rkhs_function(rng, centres, B, spec):
    a = rng.normal(size=len(centres))
    Kc = gram_matrix(spec, centres, jitter=0.0).entries
    a *= B / math.sqrt(a @ Kc @ a)
    return lambda Z: (np.exp(-0.5 * ((Z[:, None, :] - centres[None]) ** 2).sum(-1) / spec.lengthscales[0] ** 2)) @ a


def lemma1_coverage(reps=200, T=50, delta=0.05, B=1.0, sigma=0.1, seed=0):
    """Fraction of replicates whose theoretical band covers f on the grid at all t <= T."""
    rng = np.random.default_rng(seed)
    grid = joint_grid(unit_grid(10), unit_grid(10))
    ok = 0
    for _ in range(reps):
        f = _rkhs_function(rng, rng.random((8, 2)), B, K)
        fg = f(grid)
        gp = GridPosterior(K, grid, sigma, B, delta)
        covered = True
        for _t in range(T):
            i = int(rng.integers(len(grid)))
            gp = gp.update(Observation(grid[i, 0], grid[i, 1], fg[i] + sigma * rng.normal()))
            mean, std = gp.predict()
            if np.any(np.abs(mean - fg) > beta(gp) * std + 1e-12):
                covered = False
                break
        ok += covered
    return ok / reps


def test_lemma1_coverage_small():
    assert lemma1_coverage(reps=40, T=20, seed=3) >= 0.95
