"""Multi-objective Bayesian optimization with collaborating trust regions."""

from .acquisition import PendingPoint, score_candidates, select_batch
from .engine import RunConfig, run, run_sobol_baseline
from .pareto import ParetoState, dominates, hv_contributions, hvi, hypervolume, pareto_filter
from .problems import ProblemSpec, evaluate, get_problem, initial_design
from .record import RunRecord, hv_trace, load_record, save_record

__all__ = [
    "PendingPoint",
    "ParetoState",
    "ProblemSpec",
    "RunConfig",
    "RunRecord",
    "dominates",
    "evaluate",
    "get_problem",
    "hv_contributions",
    "hv_trace",
    "hvi",
    "hypervolume",
    "initial_design",
    "load_record",
    "pareto_filter",
    "run",
    "run_sobol_baseline",
    "save_record",
    "score_candidates",
    "select_batch",
]
