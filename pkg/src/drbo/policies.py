"""Action-selection rules over a shared posterior.

Every policy works on finite grids and reports grid indices. A
:class:`PolicyState` holds the posterior, the grids, the observation history
and the conservative solution tracker used in the simulator setting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adversary import DEFAULT_TOL, SolverError, solve_batch
from .kernels import InvalidInputError, KernelSpec, as_points, joint_grid
from .mmd import MarginSchedule, check_weights, empirical_weights, margin
from .posterior import GridPosterior, Observation, PosteriorModel, beta

POLICIES = ("drbo-general", "drbo-datadriven", "drbo-simulator", "ucb", "stableopt", "zero-commit")
BETA_MODES = ("fixed", "theoretical")

# conservative value rule used by the solution tracker
_TRACKER_RULE = {"drbo-general": "drbo", "drbo-datadriven": "drbo", "drbo-simulator": "drbo",
                 "ucb": "ucb", "stableopt": "stableopt", "zero-commit": "ucb"}


@dataclass(frozen=True)
class HistoryEntry:
    x_index: int
    c_index: int
    y: float
    epsilon: float
    reference: np.ndarray = field(repr=False)


@dataclass
class SolutionTracker:
    """Running argmax of per-step conservative worst-case values.

    The tracker is tied to one ``(reference, epsilon)`` pair; observing under a
    different pair raises unless the tracker is reset first.
    """

    reference: np.ndarray | None = None
    epsilon: float | None = None
    values: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    best_step: int | None = None

    @property
    def best_value(self) -> float:
        return -np.inf if self.best_step is None else self.values[self.best_step]

    @property
    def best_action(self) -> int | None:
        return None if self.best_step is None else self.actions[self.best_step]

    def matches(self, reference, epsilon) -> bool:
        return (self.reference is None
                or (np.array_equal(self.reference, reference) and self.epsilon == epsilon))

    def push(self, action: int, value: float, reference, epsilon):
        if not self.matches(reference, epsilon):
            raise InvalidInputError("solution tracking needs a fixed (reference, epsilon); reset it first")
        self.reference = np.array(reference, dtype=float)
        self.epsilon = float(epsilon)
        self.values.append(float(value))
        self.actions.append(int(action))
        if value > self.best_value:
            self.best_step = len(self.values) - 1


@dataclass
class PolicyState:
    """Mutable per-run state; one owner, updated step by step.

    ``model`` is either a :class:`GridPosterior` over the joint grid (fast path)
    or a :class:`PosteriorModel`. ``beta_mode`` selects the constant
    ``beta_value`` or the confidence-bound formula with ``delta_constant``.
    """

    model: GridPosterior | PosteriorModel
    action_grid: np.ndarray
    context_grid: np.ndarray
    context_gram: np.ndarray
    policy: str = "drbo-general"
    beta_mode: str = "fixed"
    beta_value: float = 2.0
    delta_constant: float = 1.0
    tol: float = DEFAULT_TOL
    track_solution: bool = True
    history: list = field(default_factory=list)
    tracker: SolutionTracker = field(default_factory=SolutionTracker)
    last_values: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise InvalidInputError(f"unknown policy {self.policy!r}")
        if self.beta_mode not in BETA_MODES:
            raise InvalidInputError(f"unknown beta mode {self.beta_mode!r}")
        self.action_grid = as_points(self.action_grid)
        self.context_grid = as_points(self.context_grid)
        self.context_gram = np.asarray(self.context_gram, dtype=float)
        if len(self.action_grid) == 0 or len(self.context_grid) == 0:
            raise InvalidInputError("grids must be non-empty")
        n = len(self.context_grid)
        if self.context_gram.shape != (n, n):
            raise InvalidInputError("context_gram does not match the context grid")
        self._joint = joint_grid(self.action_grid, self.context_grid)
        if isinstance(self.model, GridPosterior) and self.model.grid.shape != self._joint.shape:
            raise InvalidInputError("grid posterior must be defined on the joint action-context grid")

    @property
    def t(self) -> int:
        """One-based index of the next step."""
        return len(self.history) + 1

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.action_grid), len(self.context_grid)

    def current_beta(self) -> float:
        if self.beta_mode == "fixed":
            return self.beta_value
        return beta(self.model, self.delta_constant)

    def posterior_tables(self) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and std as (n_actions, n_contexts) tables."""
        if isinstance(self.model, GridPosterior):
            mean, std = self.model.predict()
        else:
            mean, std = self.model.predict(self._joint)
        return mean.reshape(self.shape), std.reshape(self.shape)

    def bands(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(ucb, lcb, std)`` tables over all actions and contexts."""
        mean, std = self.posterior_tables()
        b = self.current_beta()
        return mean + b * std, mean - b * std, std


def new_state(kernel: KernelSpec, action_grid, context_grid, context_gram, noise_sigma: float,
              rkhs_bound: float = 1.0, delta: float = 0.1, grid_posterior: bool = True,
              **kwargs) -> PolicyState:
    """Fresh state with an empty posterior."""
    joint = joint_grid(action_grid, context_grid)
    if grid_posterior:
        model = GridPosterior(kernel, joint, noise_sigma, rkhs_bound, delta)
    else:
        from .posterior import fit
        model = fit([], kernel, noise_sigma, rkhs_bound, delta)
    return PolicyState(model, action_grid, context_grid, context_gram, **kwargs)


def _worst_case(state: PolicyState, values, reference, epsilon):
    try:
        _, vals, _, _ = solve_batch(values, reference, epsilon, state.context_gram, state.tol)
    except SolverError as exc:
        bad = np.flatnonzero(np.asarray(exc.gap) > state.tol) if exc.gap is not None else []
        raise SolverError(f"{exc} (actions {list(bad)})", exc.weights, exc.gap) from exc
    return vals


def drbo_general_step(state: PolicyState, reference, epsilon) -> int:
    """Maximize the optimistic worst-case value ``min_{w'} <w', ucb_x>``."""
    w = check_weights(reference)
    ucb, _, _ = state.bands()
    vals = _worst_case(state, ucb, w, epsilon)
    state.last_values = vals
    return int(np.argmax(vals))


def datadriven_reference(state: PolicyState, schedule: MarginSchedule) -> tuple[np.ndarray, float]:
    """Empirical reference over observed contexts and the matching margin.

    Before any context is seen the reference is uniform with the ``t = 1``
    margin.
    """
    n = len(state.context_grid)
    seen = [h.c_index for h in state.history]
    if not seen:
        return np.full(n, 1.0 / n), margin(schedule, 1)
    return empirical_weights(seen, n), margin(schedule, len(seen))


def drbo_datadriven_step(state: PolicyState, schedule: MarginSchedule) -> int:
    ref, eps = datadriven_reference(state, schedule)
    return drbo_general_step(state, ref, eps)


def drbo_simulator_step(state: PolicyState, reference, epsilon) -> tuple[int, int]:
    """Optimistic robust action plus the context of largest posterior std there."""
    x = drbo_general_step(state, reference, epsilon)
    _, std = state.posterior_tables()
    return x, int(np.argmax(std[x]))


def ucb_baseline_step(state: PolicyState, reference) -> int:
    """Maximize the reference expectation of the upper confidence bound."""
    w = check_weights(reference)
    ucb, _, _ = state.bands()
    vals = np.atleast_2d(ucb) @ w
    state.last_values = vals
    return int(np.argmax(vals))


def robustness_set(context_grid, reference, epsilon) -> np.ndarray:
    """Grid contexts within Euclidean distance ``epsilon`` of the reference mean.

    Falls back to the single nearest context when none qualifies.
    """
    c = as_points(context_grid)
    w = check_weights(reference)
    mean = w @ c
    dist = np.linalg.norm(c - mean, axis=1)
    inside = np.flatnonzero(dist <= epsilon)
    return inside if inside.size else np.array([int(np.argmin(dist))])


def stableopt_step(state: PolicyState, reference, epsilon) -> int:
    """Maximize the smallest ucb over the robustness set."""
    delta_set = robustness_set(state.context_grid, reference, epsilon)
    ucb, _, _ = state.bands()
    vals = ucb[:, delta_set].min(axis=1)
    state.last_values = vals
    return int(np.argmax(vals))


def conservative_value(state: PolicyState, x: int, reference, epsilon) -> float:
    """Pessimistic value of action ``x`` under the policy's own robustness notion."""
    _, lcb, _ = state.bands()
    rule = _TRACKER_RULE[state.policy]
    if rule == "drbo":
        return float(_worst_case(state, lcb[x][None, :], check_weights(reference), epsilon)[0])
    if rule == "stableopt":
        return float(lcb[x, robustness_set(state.context_grid, reference, epsilon)].min())
    return float(lcb[x] @ check_weights(reference))


def observe(state: PolicyState, x: int, c: int, y: float, reference, epsilon) -> PolicyState:
    """Record an observation, update the posterior and the solution tracker."""
    na, nc = state.shape
    if not (0 <= x < na and 0 <= c < nc):
        raise InvalidInputError(f"indices ({x}, {c}) outside the {na}x{nc} grid")
    obs = Observation(state.action_grid[x], state.context_grid[c], y)
    if isinstance(state.model, GridPosterior):
        state.model = state.model.update(obs)
    else:
        from .posterior import update
        state.model = update(state.model, obs)
    ref = np.asarray(reference, dtype=float)
    state.history.append(HistoryEntry(int(x), int(c), float(y), float(epsilon), ref))
    if state.track_solution:
        state.tracker.push(x, conservative_value(state, x, ref, epsilon), ref, epsilon)
    return state


def select_solution(state: PolicyState, reference=None, epsilon=None) -> int:
    """Action of the step with the best conservative worst-case value."""
    if not state.history or state.tracker.best_step is None:
        raise InvalidInputError("no tracked steps to select from")
    if reference is not None and not state.tracker.matches(np.asarray(reference, dtype=float), epsilon):
        raise InvalidInputError("tracker was built for a different (reference, epsilon)")
    return state.tracker.best_action


def reset_tracker(state: PolicyState) -> None:
    state.tracker = SolutionTracker()
