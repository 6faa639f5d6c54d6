"""Nash equilibria of n-sided PL games by adaptive block coordinate descent."""

from .blockvec import BlockLayout, BlockVector, block_axpy, block_view, norms
from .bestresponse import BestResponseResult, abr, abr_iters_for, best_responses, exact_best_responses, gap
from .diagnostics import RateFit, estimate_pl, fit_rate, verify_contraction_theorems
from .game import GameProblem, ProblemConstants
from .harness import ExperimentConfig, cmd_gradcheck, cmd_run, cmd_verify
from .problems import PROBLEM_NAMES, ProblemSpec, registry_get
from .solvers import VARIANTS, SolverConfig, SolverResult, expected_one_step, run, select_case

__all__ = [
    "PROBLEM_NAMES",
    "VARIANTS",
    "BestResponseResult",
    "BlockLayout",
    "BlockVector",
    "ExperimentConfig",
    "GameProblem",
    "ProblemConstants",
    "ProblemSpec",
    "RateFit",
    "SolverConfig",
    "SolverResult",
    "abr",
    "abr_iters_for",
    "best_responses",
    "block_axpy",
    "block_view",
    "cmd_gradcheck",
    "cmd_run",
    "cmd_verify",
    "estimate_pl",
    "exact_best_responses",
    "expected_one_step",
    "fit_rate",
    "gap",
    "norms",
    "registry_get",
    "run",
    "select_case",
    "verify_contraction_theorems",
]
