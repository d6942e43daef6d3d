"""Acceptance checks at their stated tolerances.

Each test prints one ``CRITERION k PASS|FAIL`` line with the measured numbers
and then asserts. Run on its own with ``pytest tests/test_acceptance.py -v``
or ``python tests/test_acceptance.py``.
"""

import time

import numpy as np
import pytest

from drbo.adversary import AdversaryProblem, brute_force_oracle, solve
from drbo.harness import RunConfig, run_experiment
from drbo.kernels import KernelSpec, context_gram, unit_grid
from drbo.policies import drbo_general_step, new_state, observe, ucb_baseline_step
from drbo.posterior import Observation, fit, update

from test_mmd import _lemma2_coverage
from test_posterior import lemma1_coverage

pytestmark = pytest.mark.slow


def _report(capsys, k, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {k} {'PASS' if ok else 'FAIL'}: {detail}", flush=True)
    assert ok, detail


def _mean_regret(env, policy, seeds=20, horizon=200, **kw):
    recs = run_experiment(RunConfig(env=env, policy=policy, horizon=horizon, seeds=seeds, **kw))
    assert all(r.error is None for r in recs), [r.error for r in recs if r.error]
    return np.array([r.cumulative_regret for r in recs]).mean(axis=0), recs


def _oracle_instance(rng):
    # kernel Gram matrices of random context points, the matrices the solver sees in use
    n = int(rng.integers(2, 5))
    M = context_gram(KernelSpec(), rng.random((n, 1))).entries
    v = rng.normal(size=n) * rng.uniform(0.1, 3)
    return AdversaryProblem(v, rng.dirichlet(np.ones(n)), rng.uniform(0, 1.5), M)


def test_criterion1_oracle_equivalence(capsys):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst, bad = 0.0, 0
    for _ in range(1000):
        p = _oracle_instance(rng)
        err = abs(solve(p).value - brute_force_oracle(p, 0.01).value) / (1 + np.abs(p.values).max())
        worst = max(worst, err)
        bad += err > 1e-3
    elapsed = time.perf_counter() - start
    ok = bad == 0 and elapsed < 120
    _report(capsys, 1, ok, f"{bad}/1000 instances beyond 1e-3 (worst scaled gap {worst:.2e}), {elapsed:.0f}s")


def test_criterion2_benchmark1_trend(capsys):
    start = time.perf_counter()
    d, _ = _mean_regret("benchmark1", "drbo-general")
    u, _ = _mean_regret("benchmark1", "ucb")
    s, _ = _mean_regret("benchmark1", "stableopt")
    elapsed = time.perf_counter() - start
    vs_ucb, vs_so = d[-1] / u[-1], d[-1] / s[-1]
    sub = (d[199] / 200) / (d[49] / 50)
    lin = (u[199] / 200) / (u[49] / 50)
    ok = vs_ucb < 0.5 and vs_so < 0.5 and sub < 0.5 and 0.75 <= lin <= 1.25 and elapsed < 600
    _report(capsys, 2, ok,
            f"R_T drbo={d[-1]:.2f} ucb={u[-1]:.2f} stableopt={s[-1]:.2f}; drbo/ucb={vs_ucb:.3f} "
            f"drbo/stableopt={vs_so:.3f} (<0.5); drbo R/T 200 vs 50 ratio={sub:.3f} (<0.5); "
            f"ucb ratio={lin:.3f} (0.75..1.25); {elapsed:.0f}s")


def test_criterion3_benchmark2_no_penalty(capsys):
    start = time.perf_counter()
    d, _ = _mean_regret("benchmark2", "drbo-general")
    u, _ = _mean_regret("benchmark2", "ucb")
    elapsed = time.perf_counter() - start
    ok = d[-1] <= 2 * u[-1] and elapsed < 600
    _report(capsys, 3, ok, f"R_T drbo={d[-1]:.3f} ucb={u[-1]:.3f} (need drbo <= 2x ucb); {elapsed:.0f}s")


def test_criterion4_simple_regret(capsys):
    _, recs = _mean_regret("benchmark2", "drbo-simulator", beta_mode="theoretical")
    at50 = np.mean([r.rows[49]["simple_regret"] for r in recs])
    at200 = np.mean([r.rows[199]["simple_regret"] for r in recs])
    ok = at200 < 0.5 * at50
    _report(capsys, 4, ok, f"mean simple regret T=50 {at50:.4g}, T=200 {at200:.4g} (need < 0.5x)")


def test_criterion5_lemma2_coverage(capsys):
    cov = {t: _lemma2_coverage(t, delta=0.1, n=10, reps=500, seed=5) for t in (5, 20, 100)}
    ok = min(cov.values()) >= 0.9
    _report(capsys, 5, ok, "coverage " + ", ".join(f"t={t}: {c:.3f}" for t, c in cov.items()) + " (>= 0.9)")


def test_criterion6_lemma1_coverage(capsys):
    cov = lemma1_coverage(reps=200, T=50, delta=0.05, B=1.0, sigma=0.1, seed=6)
    _report(capsys, 6, cov >= 0.95, f"band covers f at all t <= 50 in {cov:.3f} of replicates (>= 0.95)")


def test_criterion7_wind(capsys):
    start = time.perf_counter()
    base = dict(env="wind", synthetic_wind=True, wind_length=2000, wind_seed=0, seeds=[0],
                wind_budget=5)
    res = {}
    for policy in ("drbo-simulator", "ucb", "stableopt", "zero-commit"):
        rec = run_experiment(RunConfig(policy=policy, **base))[0]
        assert rec.error is None, rec.error
        res[policy] = (rec.cumulative_regret[-1], rec.cumulative_revenue[-1])
    elapsed = time.perf_counter() - start
    d, u, s, z = (res[p] for p in ("drbo-simulator", "ucb", "stableopt", "zero-commit"))
    ok = d[0] < 0.2 * u[0] and d[1] >= s[1] and d[1] >= z[1] and elapsed < 900
    _report(capsys, 7, ok,
            f"regret drbo={d[0]:.2f} ucb={u[0]:.2f} (need < 0.2x); revenue drbo={d[1]:.2f} "
            f"stableopt={s[1]:.2f} zero={z[1]:.2f} (need drbo >= both); {elapsed:.0f}s")


def test_criterion8_reduction_identities(capsys):
    rng = np.random.default_rng(8)
    kernel = KernelSpec()
    ctx = unit_grid(6)
    M = context_gram(kernel, ctx).entries
    mismatches = 0
    for _ in range(100):
        s = new_state(kernel, unit_grid(8), ctx, M, 0.05)
        for _ in range(int(rng.integers(0, 15))):
            observe(s, int(rng.integers(8)), int(rng.integers(6)), float(rng.normal()), np.full(6, 1 / 6), 0.0)
        ref = rng.dirichlet(np.ones(6))
        mismatches += drbo_general_step(s, ref, 0.0) != ucb_baseline_step(s, ref)

    obs = [Observation([rng.random()], [rng.random()], float(rng.normal())) for _ in range(40)]
    m = fit([], kernel, 0.05, 1.0, 0.1)
    for o in obs:
        m = update(m, o)
    ref_model = fit(obs, kernel, 0.05, 1.0, 0.1)
    pts = rng.random((200, 2))
    upd_err = max(np.abs(a - b).max() for a, b in zip(m.predict(pts), ref_model.predict(pts)))

    recs = run_experiment(RunConfig(env="benchmark1", policy="drbo-general", horizon=40, seeds=2))
    row_err = max(np.abs(r.cumulative_regret - np.cumsum([row["regret"] for row in r.rows])).max()
                  for r in recs)
    ok = mismatches == 0 and upd_err <= 1e-8 and row_err <= 1e-9
    _report(capsys, 8, ok, f"argmax mismatches {mismatches}/100; update vs refit {upd_err:.1e} (<= 1e-8); "
                           f"R_t row-sum {row_err:.1e} (<= 1e-9)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
