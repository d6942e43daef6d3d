"""Worst-case distributions inside an MMD ball on the probability simplex.

For a value vector ``v`` over the context grid, a reference probability vector
``w`` and a radius ``eps`` the adversary solves::

    min  <v, w'>   s.t.  w' >= 0,  sum(w') = 1,  (w' - w)^T M (w' - w) <= eps^2

The solver is a primal-dual interior-point method, vectorized over many value
vectors that share ``(w, eps, M)``. Accuracy is certified by a Lagrangian lower
bound, so every returned solution carries a duality gap.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass

import numpy as np

from .kernels import InvalidInputError

DEFAULT_TOL = 1e-6
MAX_ITER = 10_000
EPS_ZERO = 1e-12

_MU = 3.0


class SolverError(RuntimeError):
    """Raised when the solver does not certify the requested gap.

    Attributes:
        weights: best feasible iterate(s) found.
        gap: certified duality gap of those iterates.
    """

    def __init__(self, message, weights=None, gap=None):
        super().__init__(message)
        self.weights = weights
        self.gap = gap


@dataclass
class AdversaryProblem:
    values: np.ndarray
    reference: np.ndarray
    epsilon: float
    context_gram: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.reference = np.asarray(self.reference, dtype=float)
        self.context_gram = np.asarray(self.context_gram, dtype=float)
        n = self.reference.shape[0]
        if self.values.shape != (n,) or self.context_gram.shape != (n, n):
            raise InvalidInputError(
                f"inconsistent sizes: values {self.values.shape}, reference {n}, "
                f"gram {self.context_gram.shape}")
        if not np.isfinite(self.epsilon) or self.epsilon < 0:
            raise InvalidInputError(f"epsilon must be a non-negative real, got {self.epsilon}")


@dataclass
class AdversarySolution:
    weights: np.ndarray
    value: float
    dual_gap: float
    iterations: int


def solve(problem: AdversaryProblem, tol: float = DEFAULT_TOL) -> AdversarySolution:
    """Solve a single adversary problem.

    The returned value is within ``tol * (max(v) - min(v) + 1)`` of the optimum.
    """
    w, val, gap, it = solve_batch(problem.values[None, :], problem.reference,
                                  problem.epsilon, problem.context_gram, tol)
    return AdversarySolution(w[0], float(val[0]), float(gap[0]), it)


def solve_batch(values, reference, epsilon, context_gram, tol=DEFAULT_TOL):
    """Solve one adversary problem per row of ``values``.

    Args:
        values: (m, n) value vectors.
        reference: (n,) reference probability vector.
        epsilon: MMD radius.
        context_gram: (n, n) PSD matrix defining the MMD norm.
        tol: required accuracy, relative to ``max(v) - min(v) + 1`` per row.

    Returns:
        weights (m, n), values (m,), duality gaps (m,), iteration count.
    """
    V = np.atleast_2d(np.asarray(values, dtype=float))
    w = np.asarray(reference, dtype=float)
    M = np.asarray(context_gram, dtype=float)
    m, n = V.shape
    if w.shape != (n,) or M.shape != (n, n):
        raise InvalidInputError(f"inconsistent sizes: values {V.shape}, reference {w.shape}, gram {M.shape}")
    if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-9:
        raise InvalidInputError("reference must be a probability vector")
    if not np.isfinite(epsilon) or epsilon < 0:
        raise InvalidInputError(f"epsilon must be a non-negative real, got {epsilon}")
    if not np.all(np.isfinite(V)):
        raise InvalidInputError("values must be finite")

    weights = np.tile(w, (m, 1))
    out_val = V @ w
    gaps = np.zeros(m)
    lo = V.min(axis=1)
    spread = V.max(axis=1) - lo
    active = spread > 0
    if epsilon <= EPS_ZERO or not active.any() or n == 1:
        return weights, out_val, gaps, 0

    idx = np.flatnonzero(active)
    U = (V[idx] - lo[idx, None]) / spread[idx, None]
    scaled_tol = tol * (spread[idx] + 1.0) / spread[idx]
    W, scaled_gap, iters = _primal_dual(U, w, float(epsilon), M, scaled_tol)
    weights[idx] = W
    out_val[idx] = np.einsum("ij,ij->i", W, V[idx])
    gaps[idx] = scaled_gap * spread[idx]
    return weights, out_val, gaps, iters


def _mnorm2(D, M):
    return ((D @ M) * D).sum(axis=1)


def _certificate(U, W, w, eps, M, lam):
    """Gap between the feasible value and a Lagrangian lower bound.

    For any multiplier ``lam >= 0`` the Lagrangian minimum over the simplex is
    bounded below by linearization at the current iterate, so the bound holds
    however far the iterate is from optimal.
    """
    D = W - w
    MD = D @ M
    s = eps * eps - np.einsum("ij,ij->i", MD, D)
    grad = U + 2.0 * lam[:, None] * MD
    lin = grad.min(axis=1) - np.einsum("ij,ij->i", grad, W)
    return np.maximum(lam * s - lin, 0.0)


def _primal_dual(U, w, eps, M, scaled_tol):
    """Primal-dual interior-point iterations on the range-normalized problem.

    Per row: weights ``x > 0``, multipliers ``nu`` for ``x >= 0``, ``lam`` for
    the MMD constraint and ``tau`` for the sum constraint. Rows drop out as
    soon as their certificate meets the tolerance.
    """
    m, n = U.shape
    eps2 = eps * eps
    unif = np.full(n, 1.0 / n)
    dist = np.sqrt(max(float((unif - w) @ M @ (unif - w)), 0.0))
    theta = 0.5 if dist == 0 else min(0.5, 0.5 * eps / dist)
    x0 = (1.0 - theta) * w + theta * unif
    s0 = eps2 - float((x0 - w) @ M @ (x0 - w))
    if np.any(x0 <= 0) or s0 <= 0:
        raise SolverError("could not build a strictly feasible starting point")

    t0 = n + 1.0
    X = np.tile(x0, (m, 1))
    NU = 1.0 / (t0 * X)
    LAM = np.full(m, 1.0 / (t0 * s0))
    TAU = np.zeros(m)
    gap = np.full(m, np.inf)
    live = np.arange(m)
    diag = np.arange(n)

    def residual(x, nu, lam, tau, u, t):
        d = x - w
        g = d @ M
        s = eps2 - np.einsum("ij,ij->i", g, d)
        rd = u + 2.0 * lam[:, None] * g - nu + tau[:, None]
        rc = nu * x - 1.0 / t[:, None]
        rl = lam * s - 1.0 / t
        return np.sqrt((rd * rd).sum(1) + (rc * rc).sum(1) + rl * rl), s

    iters = 0
    while live.size and iters < MAX_ITER:
        iters += 1
        x, nu, lam, tau, u = X[live], NU[live], LAM[live], TAU[live], U[live]
        d = x - w
        g = d @ M
        s = eps2 - np.einsum("ij,ij->i", g, d)
        t = _MU * (n + 1) / (np.einsum("ij,ij->i", nu, x) + lam * s)

        # reduced Newton system, solved in scaled variables dx = x * z
        H = (2.0 * lam)[:, None, None] * M + (4.0 * lam / s)[:, None, None] * g[:, :, None] * g[:, None, :]
        H = x[:, :, None] * H * x[:, None, :]
        H[:, diag, diag] += nu * x
        r = 1.0 / (t[:, None] * x) - u - tau[:, None] - 2.0 * g / (t * s)[:, None]
        sol = np.linalg.solve(H, np.stack([x * r, x], axis=2))
        a, b = sol[..., 0], sol[..., 1]
        dtau = np.einsum("ij,ij->i", x, a) / np.einsum("ij,ij->i", x, b)
        dx = x * (a - dtau[:, None] * b)
        dnu = 1.0 / (t[:, None] * x) - nu - nu / x * dx
        gdx = np.einsum("ij,ij->i", g, dx)
        dlam = (1.0 / t - lam * s + 2.0 * lam * gdx) / s

        # longest step keeping x, nu, lam positive and the iterate inside the ball
        with np.errstate(divide="ignore", invalid="ignore"):
            smax = np.where(dnu < 0, -nu / dnu, np.inf).min(1)
            smax = np.minimum(smax, np.where(dlam < 0, -lam / dlam, np.inf))
            smax = np.minimum(smax, np.where(dx < 0, -x / dx, np.inf).min(1))
            A = np.einsum("ij,ij->i", dx @ M, dx)
            root = np.where(A > 0, (-gdx + np.sqrt(gdx * gdx + A * s)) / A,
                            np.where(gdx > 0, s / (2 * gdx), np.inf))
        step = np.minimum(1.0, 0.99 * np.minimum(smax, root))
        r0, _ = residual(x, nu, lam, tau, u, t)
        pending = np.ones(len(live), dtype=bool)
        for _ in range(50):
            pi = np.flatnonzero(pending)
            if not pi.size:
                break
            sp = step[pi]
            cx = x[pi] + sp[:, None] * dx[pi]
            cnu = nu[pi] + sp[:, None] * dnu[pi]
            clam = lam[pi] + sp * dlam[pi]
            ctau = tau[pi] + sp * dtau[pi]
            rn, cs = residual(cx, cnu, clam, ctau, u[pi], t[pi])
            ok = (cs > 0) & np.all(cx > 0, axis=1) & (rn <= (1.0 - 0.01 * sp) * r0[pi])
            acc = pi[ok]
            x[acc], nu[acc], lam[acc], tau[acc] = cx[ok], cnu[ok], clam[ok], ctau[ok]
            pending[acc] = False
            step[pending] *= 0.5
        X[live], NU[live], LAM[live], TAU[live] = x, nu, lam, tau

        gap[live] = _certificate(u, x, w, eps, M, lam)
        live = live[gap[live] > scaled_tol[live]]

    if live.size:
        raise SolverError(f"adversary solver did not converge (gap {gap.max():.3g} "
                          f"after {iters} iterations)", X, gap)
    return X, gap, iters


def feasible(weights, reference, epsilon, context_gram, simplex_tol=1e-7, ball_tol=1e-6) -> bool:
    """Check simplex membership and the MMD-ball constraint."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < -simplex_tol) or np.any(w > 1 + simplex_tol) or abs(w.sum() - 1) > simplex_tol:
        return False
    d = w - np.asarray(reference, dtype=float)
    return float(np.sqrt(max(d @ np.asarray(context_gram) @ d, 0.0))) <= epsilon + ball_tol


def simplex_lattice(n: int, resolution: float) -> np.ndarray:
    """All probability vectors of length ``n`` with entries on a ``resolution`` grid."""
    return _lattice(n, _steps(resolution)).copy()


def _steps(resolution: float) -> int:
    steps = int(round(1.0 / resolution)) if resolution > 0 else 0
    if steps < 1 or abs(steps * resolution - 1.0) > 1e-9:
        raise InvalidInputError(f"resolution must divide 1, got {resolution}")
    return steps


@functools.lru_cache(maxsize=16)
def _lattice(n: int, steps: int) -> np.ndarray:
    rows = [head + (steps - sum(head),)
            for head in itertools.product(range(steps + 1), repeat=n - 1)
            if sum(head) <= steps]
    return np.array(rows, dtype=float) / steps


def brute_force_oracle(problem: AdversaryProblem, resolution: float = 0.01) -> AdversarySolution:
    """Exhaustive minimum over the simplex lattice restricted to the MMD ball.

    With ``epsilon == 0``, or when no lattice point lies inside the ball, the
    lattice point closest to the reference is returned.
    """
    n = problem.reference.shape[0]
    if n > 4:
        raise InvalidInputError(f"brute force is limited to n <= 4, got {n}")
    grid = _lattice(n, _steps(resolution))
    dist = np.sqrt(np.maximum(_mnorm2(grid - problem.reference, problem.context_gram), 0.0))
    vals = grid @ problem.values
    inside = dist <= problem.epsilon + 1e-12
    if problem.epsilon == 0 or not inside.any():
        k = int(np.argmin(dist))
    else:
        k = int(np.flatnonzero(inside)[np.argmin(vals[inside])])
    return AdversarySolution(grid[k], float(vals[k]), 0.0, len(grid))
