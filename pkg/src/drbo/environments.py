"""Benchmark functions, context samplers and wind-power data.

An :class:`Environment` bundles a true function over a finite action and
context grid with the distribution contexts are drawn from, the reference
distribution and margin shown to the learner, and the observation noise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable

import numpy as np

from .kernels import InvalidInputError, KernelSpec, as_points, context_gram, unit_grid
from .mmd import check_weights, discretize_gaussian, margin, MarginSchedule, mmd_distance

__all__ = [
    "Environment", "WindSeries", "benchmark1_function", "benchmark2_function", "wind_reward",
    "make_benchmark", "eval_true", "sample_context", "observe_reward", "discretize_gaussian",
    "ingest_wind_csv", "snap_to_grid", "wind_reference", "synth_wind_generator",
    "complexity_bprime", "ENVIRONMENTS",
]

ENVIRONMENTS = ("benchmark1", "benchmark2", "wind")


def benchmark1_function(x, c):
    """Three actions whose stochastic, worst-case and robust values disagree.

    A tall peak at ``x = 0`` pays off only for contexts close to 0.5, a plateau
    near ``x = 0.5`` pays well except for a narrow dip around ``c = 0.25``, and
    a flat ridge near ``x = 0.85`` pays a modest amount everywhere. Under the
    reference the peak is best, a context shift toward lower values favours
    the plateau, and the pure worst case favours the ridge.
    """
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    g = lambda m: np.exp(-(x - m) ** 2 / (2 * 0.085 ** 2))
    peak = 2.5883 * g(0.0) * np.exp(-(c - 0.502) ** 2 / (2 * 0.071 ** 2))
    plateau = g(0.5) * (1.7693 - 1.0738 * np.exp(-(c - 0.254) ** 2 / (2 * 0.051 ** 2)))
    return peak + plateau + 1.0205 * g(0.85) + 0.0 * c


def benchmark2_function(x, c):
    """Single bump; stochastic, worst-case and robust optima coincide."""
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    return np.exp(-((x - 0.5) ** 2 + (c - 0.5) ** 2) / 0.1)


def wind_reward(x, c):
    """Revenue for committing ``x`` when ``c`` is generated.

    Surplus energy earns 0.1 per unit, committed energy that is delivered
    earns 1 and any shortfall costs 5 per unit.
    """
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    return 0.1 * np.maximum(c - x, 0.0) + np.minimum(x, c) - 5.0 * np.maximum(x - c, 0.0)


def _constant(value):
    return lambda t: value


@dataclass(frozen=True)
class Environment:
    """Ground truth for one experiment.

    ``sampler(t)`` returns the weights of the step-``t`` context distribution and
    ``reference_schedule(t)`` the ``(weights, epsilon)`` pair the learner sees.
    Both grids are (n, 1) arrays and ``f_table[i, j] = f(x_i, c_j)``.
    """

    name: str
    true_function: Callable
    action_grid: np.ndarray
    context_grid: np.ndarray
    sampler: Callable[[int], np.ndarray]
    reference_schedule: Callable[[int], tuple[np.ndarray, float]]
    noise_sigma: float
    context_gram: np.ndarray = field(repr=False, default=None)
    f_table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise InvalidInputError("noise_sigma must be non-negative")
        ax = as_points(self.action_grid)
        cx = as_points(self.context_grid)
        if ax.shape[1] != 1 or cx.shape[1] != 1:
            raise InvalidInputError("only one-dimensional action and context grids are supported")
        object.__setattr__(self, "action_grid", ax)
        object.__setattr__(self, "context_grid", cx)
        table = np.asarray(self.true_function(ax[:, 0][:, None], cx[:, 0][None, :]), dtype=float)
        if not np.all(np.isfinite(table)):
            raise InvalidInputError("true function must be finite on the grid")
        object.__setattr__(self, "f_table", table)
        if self.context_gram is None:
            object.__setattr__(self, "context_gram", context_gram(KernelSpec(), cx).entries)

    @property
    def n_actions(self) -> int:
        return len(self.action_grid)

    @property
    def n_contexts(self) -> int:
        return len(self.context_grid)


def make_benchmark(name: str, n_actions: int = 30, n_contexts: int = 30, noise_sigma: float = 0.05,
                   reference=(0.5, 0.05), true_distribution=(0.45, 0.1),
                   mmd_kernel: KernelSpec | None = None) -> Environment:
    """Synthetic benchmark with Gaussian reference and sampling distributions.

    Distributions are given as ``(mean, std)`` and discretized onto the context
    grid. The margin is the exact MMD between the two discretized Gaussians.
    """
    funcs = {"benchmark1": benchmark1_function, "benchmark2": benchmark2_function}
    if name not in funcs:
        raise InvalidInputError(f"unknown benchmark {name!r}; choose from {sorted(funcs)}")
    actions = unit_grid(n_actions)
    contexts = unit_grid(n_contexts)
    M = context_gram(mmd_kernel or KernelSpec(), contexts).entries
    w_ref = discretize_gaussian(*reference, contexts)
    w_true = discretize_gaussian(*true_distribution, contexts)
    eps = mmd_distance(w_ref, w_true, M)
    return Environment(name, funcs[name], actions, contexts, _constant(w_true),
                       _constant((w_ref, eps)), noise_sigma, M)


def eval_true(env: Environment, x, c) -> float:
    """Noise-free function value at coordinates ``(x, c)``."""
    return float(env.true_function(float(np.ravel(x)[0]), float(np.ravel(c)[0])))


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_context(env: Environment, t: int, rng_seed) -> int:
    """Draw a context index from the step-``t`` sampler.

    ``rng_seed`` is an integer seed or a ``numpy.random.Generator`` that the
    caller threads through a run.
    """
    w = check_weights(env.sampler(t))
    u = _rng(rng_seed).random()
    idx = int(np.searchsorted(np.cumsum(w), u * w.sum(), side="right"))
    return min(idx, len(w) - 1)


def observe_reward(env: Environment, x, c, rng_seed) -> float:
    """``f(x, c)`` plus Gaussian noise of standard deviation ``noise_sigma``."""
    y = eval_true(env, x, c)
    if env.noise_sigma == 0:
        return y
    return y + env.noise_sigma * float(_rng(rng_seed).standard_normal())


@dataclass(frozen=True)
class WindSeries:
    timestamps: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        p = np.asarray(self.power, dtype=float)
        if ts.shape != p.shape or ts.ndim != 1:
            raise InvalidInputError("timestamps and power must be vectors of equal length")
        if len(ts) and np.any(np.diff(ts) <= 0):
            raise InvalidInputError("timestamps must be strictly increasing")
        if np.any(p < 0) or np.any(p > 1):
            raise InvalidInputError("power must lie in [0, 1]")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "power", p)

    def __len__(self):
        return len(self.power)


def _parse_timestamp(text: str) -> float:
    """Integer hour index or ISO-8601 time, returned in hours."""
    try:
        return float(int(text))
    except ValueError:
        return datetime.fromisoformat(text).timestamp() / 3600.0


def ingest_wind_csv(path) -> WindSeries:
    """Read ``timestamp,power`` rows and normalize power by the series maximum.

    A first row whose power column is not numeric is treated as a header.
    """
    path = Path(path)
    ts, power = [], []
    with path.open(newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row) or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 2:
                raise InvalidInputError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            stamp, value = row[0].strip(), row[1].strip()
            try:
                v = float(value)
            except ValueError:
                if not ts and lineno == 1:
                    continue
                raise InvalidInputError(f"{path}:{lineno}: cannot parse power {value!r}") from None
            try:
                h = _parse_timestamp(stamp)
            except ValueError:
                raise InvalidInputError(f"{path}:{lineno}: cannot parse timestamp {stamp!r}") from None
            if not math.isfinite(v) or v < 0:
                raise InvalidInputError(f"{path}:{lineno}: power must be finite and non-negative")
            if ts and h <= ts[-1]:
                raise InvalidInputError(f"{path}:{lineno}: timestamps are not strictly increasing")
            ts.append(h)
            power.append(v)
    if not power:
        raise InvalidInputError(f"{path}: no data rows")
    p = np.asarray(power)
    top = p.max()
    return WindSeries(np.asarray(ts), p / top if top > 0 else p)


def snap_to_grid(values, grid) -> np.ndarray:
    """Index of the nearest grid point for each value (lower index on ties)."""
    g = as_points(grid)[:, 0]
    v = np.atleast_1d(np.asarray(values, dtype=float))
    return np.abs(v[:, None] - g[None, :]).argmin(axis=1)


def wind_reference(series: WindSeries, t: int, grid, window: int = 48,
                   delta: float = 0.1) -> tuple[np.ndarray, float]:
    """Empirical reference from the ``window`` hours before hour ``t``.

    Early hours use whatever prefix exists. The margin is the fixed-sample MMD
    concentration radius for ``window`` samples.
    """
    if not 1 <= t <= len(series):
        raise InvalidInputError(f"hour {t} needs at least one past value (series length {len(series)})")
    past = series.power[max(0, t - window):t]
    idx = snap_to_grid(past, grid)
    w = np.bincount(idx, minlength=len(as_points(grid))) / len(idx)
    eps = margin(MarginSchedule("lemma2", delta=delta), window)
    return w, eps


def synth_wind_generator(seed: int, length: int) -> WindSeries:
    """Bounded AR(1) series with a daily cycle, deterministic per seed.

    A latent AR(1) process plus a 24-hour sinusoid is squashed through a
    logistic, so values stay in (0, 1).
    """
    if length < 1:
        raise InvalidInputError("length must be positive")
    rng = np.random.default_rng(seed)
    phi = 0.95
    z = np.empty(length)
    z[0] = rng.normal(0.0, 1.0)
    shocks = rng.normal(0.0, math.sqrt(1 - phi ** 2), size=length)
    for i in range(1, length):
        z[i] = phi * z[i - 1] + shocks[i]
    hours = np.arange(length)
    latent = 1.2 * z + 0.5 * np.sin(2 * np.pi * hours / 24.0) - 0.2
    return WindSeries(hours.astype(float), 1.0 / (1.0 + np.exp(-latent)))


def wind_environment(series: WindSeries, n_actions: int = 30, n_contexts: int = 30,
                     noise_sigma: float = 0.01, window: int = 48, delta: float = 0.1,
                     mmd_kernel: KernelSpec | None = None) -> Environment:
    """Wind commitment task; hour ``t`` draws its context from the data."""
    actions = unit_grid(n_actions)
    contexts = unit_grid(n_contexts)
    M = context_gram(mmd_kernel or KernelSpec(), contexts).entries
    observed = snap_to_grid(series.power, contexts)

    def sampler(t):
        w = np.zeros(n_contexts)
        w[observed[t]] = 1.0
        return w

    return Environment("wind", wind_reward, actions, contexts, sampler,
                       lambda t: wind_reference(series, t, contexts, window, delta),
                       noise_sigma, M)


def complexity_bprime(env: Environment, M=None, jitter: float = 1e-8) -> float:
    """``max_x sqrt(f_x^T M^{-1} f_x)`` over the action grid, a diagnostic."""
    M = np.asarray(env.context_gram if M is None else M, dtype=float)
    A = M + jitter * np.eye(len(M))
    sol = np.linalg.solve(A, env.f_table.T)
    q = (env.f_table.T * sol).sum(axis=0)
    return float(np.sqrt(np.maximum(q, 0.0)).max())
