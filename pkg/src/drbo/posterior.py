"""Kernel ridge regression posterior and confidence bounds.

The estimate uses unit regularization, so with data kernel matrix ``K`` the
mean is ``k(z)^T (K + I)^{-1} y`` and the variance is
``k(z, z) - k(z)^T (K + I)^{-1} k(z)``. These coincide with the posterior of a
Gaussian process with unit noise variance.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .kernels import InvalidInputError, KernelSpec, as_points, cross_kernel, gram_matrix


class PosteriorNumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Observation:
    x: tuple[float, ...]
    c: tuple[float, ...]
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in np.atleast_1d(self.x)))
        object.__setattr__(self, "c", tuple(float(v) for v in np.atleast_1d(self.c)))
        if not math.isfinite(self.y):
            raise InvalidInputError(f"observation value must be finite, got {self.y}")
        object.__setattr__(self, "y", float(self.y))

    @property
    def point(self) -> np.ndarray:
        return np.array(self.x + self.c)


@dataclass(frozen=True)
class ConfidenceBand:
    ucb: np.ndarray
    lcb: np.ndarray


def _check_params(noise_sigma, rkhs_bound, delta):
    if not noise_sigma > 0:
        raise InvalidInputError("noise_sigma must be positive")
    if not rkhs_bound >= 0:
        raise InvalidInputError("rkhs_bound must be non-negative")
    if not 0 < delta <= 1:
        raise InvalidInputError("delta must lie in (0, 1]")


@dataclass(frozen=True)
class PosteriorModel:
    """Immutable posterior snapshot; :func:`update` returns a new one."""

    kernel: KernelSpec
    noise_sigma: float
    rkhs_bound: float
    delta: float
    points: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    gram_factor: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    realized_info_gain: float = 0.0

    @property
    def n_obs(self) -> int:
        return len(self.y)

    def predict(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation at ``points``."""
        z = as_points(points)
        prior_var = np.full(len(z), self.kernel.variance)
        if self.n_obs == 0:
            return np.zeros(len(z)), np.sqrt(prior_var)
        kz = cross_kernel(self.kernel, self.points, z)
        v = solve_triangular(self.gram_factor, kz, lower=True, check_finite=False)
        mean = kz.T @ self.alpha
        var = prior_var - (v * v).sum(axis=0)
        return mean, np.sqrt(np.clip(var, 0.0, None))

    def mean(self, points) -> np.ndarray:
        return self.predict(points)[0]

    def std(self, points) -> np.ndarray:
        return self.predict(points)[1]


def _empty(kernel, noise_sigma, rkhs_bound, delta, dim=None) -> PosteriorModel:
    d = dim or 0
    return PosteriorModel(kernel, float(noise_sigma), float(rkhs_bound), float(delta),
                          np.zeros((0, d)), np.zeros(0), np.zeros((0, 0)), np.zeros(0), 0.0)


def _coef(L, y):
    return solve_triangular(L.T, solve_triangular(L, y, lower=True, check_finite=False),
                            lower=False, check_finite=False)


def fit(observations: Sequence[Observation], kernel: KernelSpec, noise_sigma: float,
        rkhs_bound: float, delta: float) -> PosteriorModel:
    """Fit the posterior from scratch with a dense Cholesky factorization."""
    _check_params(noise_sigma, rkhs_bound, delta)
    if not observations:
        return _empty(kernel, noise_sigma, rkhs_bound, delta)
    pts = np.array([o.point for o in observations])
    y = np.array([o.y for o in observations])
    A = gram_matrix(kernel, pts, jitter=0.0).entries + np.eye(len(y))
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise PosteriorNumericError(
            f"Cholesky of K + I failed (condition number {np.linalg.cond(A):.3g})") from exc
    gain = 2.0 * float(np.log(np.diag(L)).sum())
    return PosteriorModel(kernel, float(noise_sigma), float(rkhs_bound), float(delta),
                          pts, y, L, _coef(L, y), gain)


def update(model: PosteriorModel, obs: Observation, refit: bool = False) -> PosteriorModel:
    """Add one observation.

    By default the Cholesky factor is extended by one row, which also yields the
    information-gain increment ``log(1 + sigma_t(z)^2)``. ``refit=True`` rebuilds
    the model from scratch instead.
    """
    z = obs.point
    if model.n_obs and z.size != model.points.shape[1]:
        raise InvalidInputError("observation dimension does not match the model")
    if refit:
        prior = [Observation(p[: len(obs.x)], p[len(obs.x):], yy) for p, yy in zip(model.points, model.y)]
        return fit(prior + [obs], model.kernel, model.noise_sigma, model.rkhs_bound, model.delta)
    if model.n_obs == 0:
        return fit([obs], model.kernel, model.noise_sigma, model.rkhs_bound, model.delta)

    k_new = cross_kernel(model.kernel, model.points, z[None, :])[:, 0]
    l = solve_triangular(model.gram_factor, k_new, lower=True, check_finite=False)
    resid = model.kernel.variance + 1.0 - float(l @ l)
    if resid <= 0:
        raise PosteriorNumericError(f"rank-one Cholesky extension lost positivity ({resid:.3g})")
    t = model.n_obs
    L = np.zeros((t + 1, t + 1))
    L[:t, :t] = model.gram_factor
    L[t, :t] = l
    L[t, t] = math.sqrt(resid)
    y = np.append(model.y, obs.y)
    return replace(model, points=np.vstack([model.points, z]), y=y, gram_factor=L,
                   alpha=_coef(L, y), realized_info_gain=model.realized_info_gain + math.log(resid))


def beta(model, delta_constant: float = 1.0) -> float:
    """Confidence width multiplier ``sigma * sqrt(gain + 2 log(c / delta)) + B``.

    ``delta_constant`` is ``c``; the high-probability guarantees use 1, 2 or 3
    depending on how many events are union-bounded.
    """
    log_term = 2.0 * math.log(delta_constant / model.delta)
    return model.noise_sigma * math.sqrt(max(model.realized_info_gain + log_term, 0.0)) + model.rkhs_bound


def confidence_band(model, x, context_grid, beta_value: float | None = None) -> ConfidenceBand:
    """Upper and lower confidence bounds at ``x`` for every grid context."""
    ctx = as_points(context_grid)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    pts = np.hstack([np.tile(xs, (len(ctx), 1)), ctx])
    mean, std = model.predict(pts)
    b = beta(model) if beta_value is None else beta_value
    return ConfidenceBand(mean + b * std, mean - b * std)


class GridPosterior:
    """The same posterior restricted to a fixed finite set of points.

    Stores the posterior mean and covariance over the grid, so an update costs
    O(G^2) regardless of how many observations have been absorbed. Only
    predictions at grid points are available.
    """

    def __init__(self, kernel: KernelSpec, grid, noise_sigma: float, rkhs_bound: float,
                 delta: float):
        _check_params(noise_sigma, rkhs_bound, delta)
        self.kernel = kernel
        self.grid = as_points(grid)
        self.noise_sigma = float(noise_sigma)
        self.rkhs_bound = float(rkhs_bound)
        self.delta = float(delta)
        self._mean = np.zeros(len(self.grid))
        self._cov = gram_matrix(kernel, self.grid, jitter=0.0).entries
        self.realized_info_gain = 0.0
        self.n_obs = 0
        self._index = {tuple(np.round(p, 12)): i for i, p in enumerate(self.grid)}

    def index_of(self, point) -> int:
        key = tuple(np.round(np.asarray(point, dtype=float), 12))
        try:
            return self._index[key]
        except KeyError:
            raise InvalidInputError(f"point {point} is not on the posterior grid") from None

    def predict(self, points=None) -> tuple[np.ndarray, np.ndarray]:
        """Mean and std at ``points`` (all grid points by default)."""
        std = np.sqrt(np.clip(np.diag(self._cov), 0.0, None))
        if points is None or points is self.grid:
            return self._mean.copy(), std
        idx = [self.index_of(p) for p in as_points(points)]
        return self._mean[idx], std[idx]

    def update(self, obs: Observation) -> "GridPosterior":
        i = self.index_of(obs.point)
        col = self._cov[:, i]
        denom = 1.0 + col[i]
        mean = self._mean + col * ((obs.y - self._mean[i]) / denom)
        cov = self._cov - np.outer(col, col / denom)
        new = copy.copy(self)
        new._mean, new._cov = mean, cov
        new.realized_info_gain = self.realized_info_gain + math.log(denom)
        new.n_obs = self.n_obs + 1
        return new
