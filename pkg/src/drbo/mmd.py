"""MMD on a finite context grid, empirical distributions and margin schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kernels import InvalidInputError

NEGATIVE_TOL = 1e-9

MARGIN_MODES = ("fixed", "lemma2", "corollary1")


class NumericError(ArithmeticError):
    pass


def check_weights(w, atol: float = 1e-9) -> np.ndarray:
    """Validate a probability vector and return it as an array."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InvalidInputError("weights must be a non-empty vector")
    if np.any(w < -atol) or np.any(w > 1 + atol) or abs(w.sum() - 1.0) > atol:
        raise InvalidInputError("weights must lie in [0, 1] and sum to 1")
    return w


def mmd_distance(w, w2, M) -> float:
    """MMD between two distributions on the grid, ``sqrt((w-w2)^T M (w-w2))``.

    Quadratic forms in ``[-1e-9, 0)`` are treated as round-off and clamp to 0.
    """
    w = np.asarray(w, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    M = np.asarray(M, dtype=float)
    if w.shape != w2.shape or M.shape != (w.size, w.size):
        raise InvalidInputError(f"shape mismatch: {w.shape}, {w2.shape}, {M.shape}")
    d = w - w2
    q = float(d @ M @ d)
    if q < -NEGATIVE_TOL:
        raise NumericError(f"negative MMD quadratic form {q:.3g}; is M positive semi-definite?")
    return math.sqrt(max(q, 0.0))


def empirical_weights(observed: Sequence[int], n: int) -> np.ndarray:
    """Relative frequencies of grid indices."""
    idx = np.asarray(observed, dtype=int)
    if idx.size == 0:
        raise InvalidInputError("empirical distribution needs at least one observation")
    if idx.min() < 0 or idx.max() >= n:
        raise InvalidInputError(f"indices must lie in [0, {n})")
    return np.bincount(idx, minlength=n) / idx.size


@dataclass(frozen=True)
class MarginSchedule:
    """Radius of the uncertainty ball as a function of the sample count ``t``.

    ``fixed`` returns ``epsilon0``. ``lemma2`` is the single-``t`` concentration
    radius ``(2 + sqrt(2 log(1/delta))) / sqrt(t)``; ``corollary1`` widens it to
    ``(2 + sqrt(2 log(6 t^2 / delta))) / sqrt(t)`` so that it holds for all ``t``
    at once.
    """

    mode: str = "fixed"
    epsilon0: float = 0.0
    delta: float = 0.1

    def __post_init__(self):
        if self.mode not in MARGIN_MODES:
            raise InvalidInputError(f"unknown margin mode {self.mode!r}")
        if self.epsilon0 < 0:
            raise InvalidInputError("epsilon0 must be non-negative")
        if self.delta <= 0:
            raise InvalidInputError("delta must be positive")

    def __call__(self, t: int) -> float:
        return margin(self, t)


def margin(schedule: MarginSchedule, t: int) -> float:
    if t < 1:
        raise InvalidInputError("margin is defined for t >= 1")
    if schedule.mode == "fixed":
        return schedule.epsilon0
    if schedule.mode == "lemma2":
        log_term = math.log(1.0 / schedule.delta)
    else:
        log_term = math.log(6.0 * t * t / schedule.delta)
    # log_term < 0 only happens for delta > 1 (or > 6 t^2), where the bound is vacuous anyway
    return (2.0 + math.sqrt(2.0 * max(log_term, 0.0))) / math.sqrt(t)


def discretize_gaussian(mean: float, std: float, grid) -> np.ndarray:
    """Gaussian density at the grid points, renormalized to a probability vector."""
    if std <= 0:
        raise InvalidInputError("std must be positive")
    c = np.asarray(grid, dtype=float).reshape(len(grid), -1)[:, 0]
    logp = -0.5 * ((c - mean) / std) ** 2
    p = np.exp(logp - logp.max())
    return p / p.sum()


def mmd_between_gaussian_grids(mean1, std1, mean2, std2, grid, M) -> float:
    """MMD between two Gaussians after discretizing both onto ``grid``."""
    return mmd_distance(discretize_gaussian(mean1, std1, grid),
                        discretize_gaussian(mean2, std2, grid), M)
