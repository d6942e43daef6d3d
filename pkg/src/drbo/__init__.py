"""Distributionally robust Bayesian optimization on finite grids."""

from .adversary import AdversaryProblem, AdversarySolution, SolverError, brute_force_oracle, solve, solve_batch
from .environments import Environment, WindSeries, make_benchmark, wind_environment
from .harness import RunConfig, RunRecord, run_experiment, wind_walkforward
from .kernels import GramMatrix, InvalidInputError, JointPoint, KernelSpec, context_gram, eval_kernel, gram_matrix
from .mmd import MarginSchedule, empirical_weights, margin, mmd_distance
from .posterior import GridPosterior, Observation, PosteriorModel, beta, confidence_band, fit, update

__version__ = "0.1.0"
