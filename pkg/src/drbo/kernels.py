"""Stationary kernels and Gram matrices on the unit box.

Two families are supported, squared-exponential and Matern-5/2. The same
machinery serves the regression kernel over joint (action, context) points
and the MMD kernel over contexts alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_JITTER = 1e-8

FAMILIES = ("se", "matern52")


class InvalidInputError(ValueError):
    """Raised when arguments violate a documented precondition."""


@dataclass(frozen=True)
class KernelSpec:
    family: str = "se"
    lengthscales: tuple[float, ...] = (0.2,)
    variance: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown kernel family {self.family!r}")
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        if not ls or any(not np.isfinite(v) or v <= 0 for v in ls):
            raise InvalidInputError(f"lengthscales must be positive, got {ls}")
        if not np.isfinite(self.variance) or self.variance <= 0:
            raise InvalidInputError(f"variance must be positive, got {self.variance}")
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "variance", float(self.variance))

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        ls = d.get("lengthscales", d.get("lengthscale", 0.2))
        return cls(family=d.get("family", "se"),
                   lengthscales=tuple(np.atleast_1d(ls)),
                   variance=d.get("variance", 1.0))

    def to_dict(self) -> dict:
        return {"family": self.family, "lengthscales": list(self.lengthscales),
                "variance": self.variance}

    def scales_for(self, dim: int) -> np.ndarray:
        """Lengthscale vector broadcast to ``dim`` coordinates."""
        if len(self.lengthscales) == 1:
            return np.full(dim, self.lengthscales[0])
        if len(self.lengthscales) != dim:
            raise InvalidInputError(
                f"kernel has {len(self.lengthscales)} lengthscales, points have dimension {dim}")
        return np.asarray(self.lengthscales)


@dataclass(frozen=True)
class JointPoint:
    x: tuple[float, ...]
    c: tuple[float, ...]

    def __post_init__(self):
        x = tuple(float(v) for v in np.atleast_1d(self.x))
        c = tuple(float(v) for v in np.atleast_1d(self.c))
        if not all(np.isfinite(x + c)):
            raise InvalidInputError("point coordinates must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "c", c)

    def as_array(self) -> np.ndarray:
        return np.array(self.x + self.c)


@dataclass
class GramMatrix:
    entries: np.ndarray
    jitter: float = 0.0

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    @property
    def shape(self):
        return self.entries.shape


def as_points(points) -> np.ndarray:
    """Coerce JointPoints, 1-D coordinate lists or 2-D arrays to an (n, d) array."""
    if isinstance(points, JointPoint):
        return points.as_array()[None, :]
    if isinstance(points, (list, tuple)) and points and isinstance(points[0], JointPoint):
        return np.array([p.as_array() for p in points])
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr[:, None]
    return arr


def _scaled_sqdist(a: np.ndarray, b: np.ndarray, scales: np.ndarray) -> np.ndarray:
    a = a / scales
    b = b / scales
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d2, 0.0)


def cross_kernel(spec: KernelSpec, a, b) -> np.ndarray:
    """Kernel matrix between two point sets, shape (len(a), len(b))."""
    a = as_points(a)
    b = as_points(b)
    if a.shape[1] != b.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    d2 = _scaled_sqdist(a, b, spec.scales_for(a.shape[1]))
    if spec.family == "se":
        k = np.exp(-0.5 * d2)
    else:
        r = np.sqrt(5.0 * d2)
        k = (1.0 + r + r * r / 3.0) * np.exp(-r)
    return spec.variance * k


def eval_kernel(spec: KernelSpec, z1, z2) -> float:
    """Kernel value between two single points.

    A flat coordinate list is read as one point, unlike :func:`as_points`.
    """
    a = z1.as_array()[None, :] if isinstance(z1, JointPoint) else np.atleast_1d(np.asarray(z1, dtype=float))[None, :]
    b = z2.as_array()[None, :] if isinstance(z2, JointPoint) else np.atleast_1d(np.asarray(z2, dtype=float))[None, :]
    if a.shape != b.shape or a.shape[0] != 1:
        raise InvalidInputError(f"expected two single points of equal dimension, got {a.shape} and {b.shape}")
    if np.array_equal(a, b):
        return spec.variance
    return float(cross_kernel(spec, a, b)[0, 0])


def gram_matrix(spec: KernelSpec, points, jitter: float = DEFAULT_JITTER) -> GramMatrix:
    """Symmetric Gram matrix of ``points`` with ``jitter`` added to the diagonal."""
    pts = as_points(points)
    if pts.shape[0] == 0:
        raise InvalidInputError("gram_matrix needs at least one point")
    if jitter < 0:
        raise InvalidInputError("jitter must be non-negative")
    k = cross_kernel(spec, pts, pts)
    k = 0.5 * (k + k.T)
    np.fill_diagonal(k, spec.variance + jitter)
    return GramMatrix(k, float(jitter))


def context_gram(spec_m: KernelSpec, contexts: Sequence, jitter: float = DEFAULT_JITTER) -> GramMatrix:
    """Gram matrix of the MMD kernel over the context grid.

    The kernel variance is capped at 1 so that the empirical MMD concentration
    margins stay valid.
    """
    if spec_m.variance > 1.0:
        spec_m = KernelSpec(spec_m.family, spec_m.lengthscales, 1.0)
    return gram_matrix(spec_m, contexts, jitter)


def unit_grid(n: int) -> np.ndarray:
    """``n`` equally spaced points on [0, 1] as an (n, 1) array."""
    if n < 1:
        raise InvalidInputError("grid needs at least one point")
    return np.linspace(0.0, 1.0, n)[:, None] if n > 1 else np.array([[0.5]])


def joint_grid(actions: np.ndarray, contexts: np.ndarray) -> np.ndarray:
    """All (action, context) pairs, action-major: row ``i * n_c + j`` is (x_i, c_j)."""
    actions = as_points(actions)
    contexts = as_points(contexts)
    na, nc = len(actions), len(contexts)
    return np.hstack([np.repeat(actions, nc, axis=0), np.tile(contexts, (na, 1))])
