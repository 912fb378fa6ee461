"""Sort-free Euclidean projection onto the top-k-sum constraint set."""

from .core import (
    DEFAULT_TOL,
    FLAG_BRACKET,
    FLAG_FEASIBLE,
    FLAG_LOWER,
    FLAG_SHORTCUT,
    FLAG_UPPER,
    DomainError,
    InvariantError,
    IterationStats,
    KktCertificate,
    NumericError,
    ParameterError,
    ProblemInstance,
    ProjectionSolution,
    kth_largest,
    project_k1,
    project_kn,
    topk_sum,
    verify_kkt,
)
from .kkt_funcs import (
    BreakpointQuery,
    GSearchResult,
    breakpoint_query,
    deriv_D_right,
    deriv_Fr,
    eval_D,
    eval_Fr,
    eval_gr,
    g_search,
)
from .eips import SolverConfig, project
from .baselines import GridCandidate, grid_oracle, sorted_solver
from .bench import (
    BenchRecord,
    ExperimentGrid,
    estimate_slope,
    flag_stats,
    gen_instance,
    read_vector,
    run_suite,
    write_vector,
)

__all__ = [
    "BenchRecord",
    "DEFAULT_TOL",
    "ExperimentGrid",
    "FLAG_BRACKET",
    "FLAG_FEASIBLE",
    "FLAG_LOWER",
    "FLAG_SHORTCUT",
    "FLAG_UPPER",
    "BreakpointQuery",
    "DomainError",
    "GSearchResult",
    "GridCandidate",
    "InvariantError",
    "IterationStats",
    "KktCertificate",
    "NumericError",
    "ParameterError",
    "ProblemInstance",
    "ProjectionSolution",
    "SolverConfig",
    "breakpoint_query",
    "deriv_D_right",
    "deriv_Fr",
    "eval_D",
    "eval_Fr",
    "estimate_slope",
    "eval_gr",
    "flag_stats",
    "g_search",
    "gen_instance",
    "grid_oracle",
    "kth_largest",
    "project",
    "project_k1",
    "project_kn",
    "read_vector",
    "run_suite",
    "sorted_solver",
    "topk_sum",
    "verify_kkt",
    "write_vector",
]
