"""Approximate selective maximum-likelihood inference after randomized queries."""
from .exceptions import (DegenerateSelection, DomainError, EmptySelection,
                         InconsistentKKT, NumericalError, SelinfError, SolverError)
from .filedrawer import FileDrawerProblem, fit_1d, pivot_1d, pvalue_1d, solve_mle_1d
from .multi import MultiQuerySetup, multi_infer, ms_then_slope_pipeline, two_lasso_pipeline
from .queries import (Dataset, RandomizationSpec, build_target, lasso_kkt, ms_kkt,
                      slope_kkt, solve_marginal_screening, solve_randomized_lasso,
                      solve_randomized_slope)
from .selective_mle import MleResult, implied_params, infer

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "Dataset", "RandomizationSpec", "build_target",
    "solve_randomized_lasso", "solve_marginal_screening", "solve_randomized_slope",
    "lasso_kkt", "ms_kkt", "slope_kkt",
    "implied_params", "infer", "MleResult",
    "MultiQuerySetup", "multi_infer", "two_lasso_pipeline", "ms_then_slope_pipeline",
    "FileDrawerProblem", "fit_1d", "pivot_1d", "pvalue_1d", "solve_mle_1d",
    "SelinfError", "DomainError", "SolverError", "EmptySelection",
    "InconsistentKKT", "DegenerateSelection", "NumericalError",
]
