"""Experiment configuration, execution, regret metrics and persistence."""

from __future__ import annotations

import csv
import functools
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .adversary import DEFAULT_TOL, SolverError, solve_batch
from .environments import (ENVIRONMENTS, Environment, WindSeries, ingest_wind_csv, make_benchmark,
                           sample_context, synth_wind_generator, wind_environment, wind_reward)
from .kernels import InvalidInputError, KernelSpec
from .mmd import MarginSchedule
from .policies import (POLICIES, PolicyState, datadriven_reference, drbo_general_step,
                       drbo_simulator_step, new_state, observe, reset_tracker, select_solution,
                       stableopt_step, ucb_baseline_step)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EPSILON_MODES = ("exact", "fixed", "lemma2", "corollary1")
REGRET_CLAMP = -1e-6

# wall-clock time lives in a separate timing file so run CSVs stay byte-identical per seed
STEP_COLUMNS = ("t", "x_index", "c_index", "y", "epsilon", "regret", "cumulative_regret",
                "optimistic_value", "revenue", "cumulative_revenue", "x_hat", "simple_regret")
TIMING_COLUMNS = ("t", "wall_ms")
PLOT_COLUMNS = ("step", "policy", "mean_regret", "stderr", "mean_revenue")


@dataclass
class RunConfig:
    env: str = "benchmark1"
    policy: str = "drbo-general"
    horizon: int = 200
    seeds: list = field(default_factory=lambda: list(range(20)))
    kernel: KernelSpec = field(default_factory=KernelSpec)
    mmd_kernel: KernelSpec = field(default_factory=KernelSpec)
    beta_mode: str = "fixed"
    beta: float = 2.0
    delta: float = 0.1
    delta_constant: float = 1.0
    rkhs_bound: float = 1.0
    epsilon_mode: str = "exact"
    epsilon0: float = 0.0
    tol: float = DEFAULT_TOL
    noise_sigma: float | None = None
    n_actions: int = 30
    n_contexts: int = 30
    out: str | None = None
    wind_csv: str | None = None
    synthetic_wind: bool = False
    wind_length: int = 2000
    wind_seed: int = 0
    wind_window: int = 48
    wind_budget: int = 100
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.kernel, dict):
            self.kernel = KernelSpec.from_dict(self.kernel)
        if isinstance(self.mmd_kernel, dict):
            self.mmd_kernel = KernelSpec.from_dict(self.mmd_kernel)
        if isinstance(self.seeds, int):
            self.seeds = list(range(self.seeds))
        self.seeds = [int(s) for s in self.seeds]
        self.validate()

    def validate(self):
        if self.env not in ENVIRONMENTS:
            raise InvalidInputError(f"unknown environment {self.env!r}; choose from {ENVIRONMENTS}")
        if self.policy not in POLICIES:
            raise InvalidInputError(f"unknown policy {self.policy!r}; choose from {POLICIES}")
        if self.horizon < 1:
            raise InvalidInputError("horizon must be at least 1")
        if not self.seeds:
            raise InvalidInputError("at least one seed is required")
        if self.epsilon_mode not in EPSILON_MODES:
            raise InvalidInputError(f"unknown epsilon mode {self.epsilon_mode!r}")
        if self.policy == "drbo-datadriven" and self.epsilon_mode not in ("lemma2", "corollary1"):
            raise InvalidInputError("drbo-datadriven needs epsilon mode lemma2 or corollary1")
        if self.beta_mode not in ("fixed", "theoretical"):
            raise InvalidInputError(f"unknown beta mode {self.beta_mode!r}")
        if self.env == "wind" and not (self.wind_csv or self.synthetic_wind):
            raise InvalidInputError("the wind environment needs wind_csv or synthetic_wind")
        if self.wind_budget < 1 or self.wind_window < 1 or self.workers < 1:
            raise InvalidInputError("wind_budget, wind_window and workers must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = {k.replace("-", "_"): v for k, v in (d or {}).items()}
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise InvalidInputError(f"unknown config keys: {unknown}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel"] = self.kernel.to_dict()
        d["mmd_kernel"] = self.mmd_kernel.to_dict()
        return d


def load_config(path) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is not None and not isinstance(data, dict):
        raise InvalidInputError(f"{path}: config must be a mapping")
    return RunConfig.from_dict(data or {})


@dataclass
class RunRecord:
    policy: str
    env: str
    seed: int
    rows: list = field(default_factory=list)
    x_hat: int | None = None
    simple_regret: float | None = None
    realized_info_gain: float = 0.0
    error: str | None = None

    @property
    def cumulative_regret(self) -> np.ndarray:
        return np.array([r["cumulative_regret"] for r in self.rows])

    @property
    def cumulative_revenue(self) -> np.ndarray:
        return np.array([r["cumulative_revenue"] for r in self.rows])


def build_environment(config: RunConfig) -> Environment:
    sigma = config.noise_sigma
    if config.env == "wind":
        series = load_wind_series(config)
        return wind_environment(series, config.n_actions, config.n_contexts,
                                0.01 if sigma is None else sigma, config.wind_window,
                                config.delta, config.mmd_kernel)
    return make_benchmark(config.env, config.n_actions, config.n_contexts,
                          0.05 if sigma is None else sigma, mmd_kernel=config.mmd_kernel)


def load_wind_series(config: RunConfig) -> WindSeries:
    if config.wind_csv:
        return ingest_wind_csv(config.wind_csv)
    return synth_wind_generator(config.wind_seed, config.wind_length)


@functools.lru_cache(maxsize=16384)
def _robust_cached(f_bytes, shape, ref_bytes, eps, m_bytes, tol):
    f = np.frombuffer(f_bytes).reshape(shape)
    ref = np.frombuffer(ref_bytes)
    M = np.frombuffer(m_bytes).reshape(len(ref), len(ref))
    _, vals, _, _ = solve_batch(f, ref, eps, M, tol)
    vals.setflags(write=False)
    return vals


def robust_values(env: Environment, reference, epsilon, M=None, tol=DEFAULT_TOL) -> np.ndarray:
    """Worst-case expected true value of every action, cached per (reference, epsilon)."""
    M = env.context_gram if M is None else M
    ref = np.ascontiguousarray(reference, dtype=float)
    f = np.ascontiguousarray(env.f_table)
    return _robust_cached(f.tobytes(), f.shape, ref.tobytes(), float(epsilon),
                          np.ascontiguousarray(M, dtype=float).tobytes(), tol)


def robust_value(env: Environment, x: int, reference, epsilon, M=None, tol=DEFAULT_TOL) -> float:
    """``min_{w' in ball} <w', f_x>`` for the true function."""
    return float(robust_values(env, reference, epsilon, M, tol)[x])


def _clamped_gap(best: float, value: float) -> float:
    r = best - value
    if r < REGRET_CLAMP:
        raise ArithmeticError(f"negative regret {r:.3g} beyond solver tolerance")
    return max(r, 0.0)


def robust_regret_step(env: Environment, x_t: int, reference, epsilon, M=None, tol=DEFAULT_TOL) -> float:
    """Robust value of the best grid action minus that of ``x_t``."""
    vals = robust_values(env, reference, epsilon, M, tol)
    return _clamped_gap(float(vals.max()), float(vals[x_t]))


def simple_regret(env: Environment, x_hat: int, reference, epsilon, M=None, tol=DEFAULT_TOL) -> float:
    return robust_regret_step(env, x_hat, reference, epsilon, M, tol)


def _initial_state(config: RunConfig, env: Environment) -> PolicyState:
    return new_state(config.kernel, env.action_grid, env.context_grid, env.context_gram,
                     env.noise_sigma if env.noise_sigma > 0 else 1e-3,
                     rkhs_bound=config.rkhs_bound, delta=config.delta, policy=config.policy,
                     beta_mode=config.beta_mode, beta_value=config.beta,
                     delta_constant=config.delta_constant, tol=config.tol,
                     track_solution=config.policy == "drbo-simulator")


def _reference(config: RunConfig, env: Environment, state: PolicyState, t: int):
    if config.epsilon_mode in ("lemma2", "corollary1"):
        return datadriven_reference(state, MarginSchedule(config.epsilon_mode, delta=config.delta))
    ref, eps = env.reference_schedule(t)
    if config.epsilon_mode == "fixed":
        eps = config.epsilon0
    return ref, eps


def _choose(state: PolicyState, policy: str, ref, eps) -> tuple[int, int | None]:
    """Action and, for the simulator policy, the queried context."""
    if policy == "drbo-simulator":
        return drbo_simulator_step(state, ref, eps)
    if policy in ("drbo-general", "drbo-datadriven"):
        return drbo_general_step(state, ref, eps), None
    if policy == "ucb":
        return ucb_baseline_step(state, ref), None
    if policy == "stableopt":
        return stableopt_step(state, ref, eps), None
    state.last_values = None
    return 0, None


def run_seed(config: RunConfig, seed: int, env: Environment | None = None) -> RunRecord:
    """One replicate of the sequential protocol; deterministic per (config, seed)."""
    if config.env == "wind":
        return wind_walkforward(config, seed=seed, env=env)
    env = env or build_environment(config)
    state = _initial_state(config, env)
    ctx_rng = np.random.default_rng([seed, 0])
    noise_rng = np.random.default_rng([seed, 1])
    rec = RunRecord(config.policy, config.env, seed)
    cum = 0.0
    try:
        for t in range(1, config.horizon + 1):
            start = time.perf_counter()
            ref, eps = _reference(config, env, state, t)
            x, c = _choose(state, config.policy, ref, eps)
            if c is None:
                c = sample_context(env, t, ctx_rng)
            y = float(env.f_table[x, c])
            if env.noise_sigma > 0:
                y += env.noise_sigma * float(noise_rng.standard_normal())
            opt = None if state.last_values is None else float(state.last_values[x])
            observe(state, x, c, y, ref, eps)
            r = robust_regret_step(env, x, ref, eps, tol=config.tol)
            cum += r
            row = dict(t=t, x_index=x, c_index=c, y=y, epsilon=float(eps), regret=r,
                       cumulative_regret=cum, optimistic_value=opt, revenue=None,
                       cumulative_revenue=None, x_hat=None, simple_regret=None)
            if state.track_solution:
                row["x_hat"] = select_solution(state)
                row["simple_regret"] = simple_regret(env, row["x_hat"], ref, eps, tol=config.tol)
            row["wall_ms"] = 1000.0 * (time.perf_counter() - start)
            rec.rows.append(row)
    except (SolverError, ArithmeticError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        log.error("seed %d aborted at step %d: %s", seed, len(rec.rows) + 1, exc)
    if rec.rows and rec.rows[-1]["x_hat"] is not None:
        rec.x_hat = rec.rows[-1]["x_hat"]
        rec.simple_regret = rec.rows[-1]["simple_regret"]
    rec.realized_info_gain = float(state.model.realized_info_gain)
    return rec


def wind_walkforward(config: RunConfig, seed: int = 0, env: Environment | None = None,
                     series: WindSeries | None = None) -> RunRecord:
    """Hourly commitment on a wind series.

    For every hour after the first ``wind_window`` hours the learner builds
    the empirical reference from the window, spends ``wind_budget`` simulator
    queries, deploys its tracked solution and is paid ``f(x, c)`` at the
    actual generation ``c``. The posterior carries over between hours because
    the simulator is the same every hour. ``zero-commit`` always deploys action 0.
    """
    series = series or load_wind_series(config)
    if env is None:
        env = wind_environment(series, config.n_actions, config.n_contexts,
                               0.01 if config.noise_sigma is None else config.noise_sigma,
                               config.wind_window, config.delta, config.mmd_kernel)
    if len(series) <= config.wind_window:
        raise InvalidInputError("wind series is not longer than the warm-up window")
    policy = config.policy
    state = None
    if policy != "zero-commit":
        state = _initial_state(config, env)
        state.track_solution = True
    noise_rng = np.random.default_rng([seed, 1])
    rec = RunRecord(policy, "wind", seed)
    cum_r = cum_rev = 0.0
    actions = env.action_grid[:, 0]
    hours = range(config.wind_window, len(series))
    try:
        for step, hour in enumerate(hours, start=1):
            start = time.perf_counter()
            ref, eps = env.reference_schedule(hour)
            opt = None
            if state is None:
                x = 0
            else:
                reset_tracker(state)
                for _ in range(config.wind_budget):
                    xq, cq = _wind_query(state, policy, ref, eps)
                    y = float(env.f_table[xq, cq]) + env.noise_sigma * float(noise_rng.standard_normal())
                    observe(state, xq, cq, y, ref, eps)
                x = select_solution(state)
                opt = state.tracker.best_value
            c_actual = float(series.power[hour])
            revenue = float(wind_reward(actions[x], c_actual))
            r = robust_regret_step(env, x, ref, eps, tol=config.tol)
            cum_r += r
            cum_rev += revenue
            rec.rows.append(dict(t=step, x_index=x, c_index=int(np.argmax(env.sampler(hour))),
                                 y=revenue, epsilon=float(eps), regret=r, cumulative_regret=cum_r,
                                 optimistic_value=opt, revenue=revenue, cumulative_revenue=cum_rev,
                                 x_hat=x, simple_regret=r,
                                 wall_ms=1000.0 * (time.perf_counter() - start)))
    except (SolverError, ArithmeticError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        log.error("wind run aborted at hour %d: %s", len(rec.rows) + config.wind_window, exc)
    if state is not None:
        rec.realized_info_gain = float(state.model.realized_info_gain)
    return rec


def _wind_query(state: PolicyState, policy: str, ref, eps) -> tuple[int, int]:
    """Simulator query; baselines pick their own action and the most uncertain context there."""
    if policy.startswith("drbo"):
        return drbo_simulator_step(state, ref, eps)
    x, _ = _choose(state, policy, ref, eps)
    _, std = state.posterior_tables()
    return x, int(np.argmax(std[x]))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def record_csv(rec: RunRecord) -> str:
    buf = io.StringIO()
    buf.write(f"# drbo-run schema v{SCHEMA_VERSION} policy={rec.policy} env={rec.env} seed={rec.seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STEP_COLUMNS)
    for row in rec.rows:
        w.writerow([_fmt(row[k]) for k in STEP_COLUMNS])
    if rec.error:
        buf.write(f"# error: {rec.error}\n")
    return buf.getvalue()


def timing_csv(rec: RunRecord) -> str:
    buf = io.StringIO()
    buf.write(f"# drbo-timing schema v{SCHEMA_VERSION} policy={rec.policy} env={rec.env} seed={rec.seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TIMING_COLUMNS)
    for row in rec.rows:
        w.writerow([_fmt(row[k]) for k in TIMING_COLUMNS])
    return buf.getvalue()


def aggregate(records: list[RunRecord]) -> dict[str, np.ndarray]:
    """Per-step mean and standard error of cumulative regret across seeds.

    Seeds that aborted early are truncated to the shortest complete prefix.
    """
    if not records:
        raise InvalidInputError("nothing to aggregate")
    n = min(len(r.rows) for r in records)
    R = np.array([r.cumulative_regret[:n] for r in records])
    out = {"step": np.arange(1, n + 1), "mean_regret": R.mean(axis=0),
           "stderr": R.std(axis=0, ddof=1) / np.sqrt(len(records)) if len(records) > 1 else np.zeros(n)}
    if records[0].rows and records[0].rows[0]["cumulative_revenue"] is not None:
        out["mean_revenue"] = np.array([r.cumulative_revenue[:n] for r in records]).mean(axis=0)
    return out


def emit_plot_data(records: list[RunRecord], path) -> Path:
    """Tidy CSV with one row per (step, policy)."""
    if not records:
        raise InvalidInputError("no records to emit")
    by_policy: dict[str, list] = {}
    for r in records:
        by_policy.setdefault(r.policy, []).append(r)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# drbo-plot schema v{SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for policy, recs in by_policy.items():
            agg = aggregate(recs)
            rev = agg.get("mean_revenue")
            for i, step in enumerate(agg["step"]):
                w.writerow([int(step), policy, repr(float(agg["mean_regret"][i])),
                            repr(float(agg["stderr"][i])), "" if rev is None else repr(float(rev[i]))])
    return path


def run_experiment(config: RunConfig) -> list[RunRecord]:
    """Run every seed, write per-seed CSVs and the aggregate if ``config.out`` is set."""
    config.validate()
    env = build_environment(config)
    if config.workers > 1 and len(config.seeds) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            # environments hold closures, so each worker rebuilds its own
            records = list(pool.map(run_seed, [config] * len(config.seeds), config.seeds))
    else:
        records = [run_seed(config, s, env) for s in config.seeds]
    if config.out:
        write_outputs(records, config)
    return records


def write_outputs(records: list[RunRecord], config: RunConfig) -> list[Path]:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for rec in records:
        p = out / f"{rec.env}_{rec.policy}_seed{rec.seed}.csv"
        p.write_text(record_csv(rec))
        timing = out / f"{rec.env}_{rec.policy}_seed{rec.seed}_timing.csv"
        timing.write_text(timing_csv(rec))
        paths.extend([p, timing])
    paths.append(emit_plot_data(records, out / f"{config.env}_{config.policy}_aggregate.csv"))
    with (out / "config.yaml").open("w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)
    return paths
