"""Martingale Phi-inequality laboratory.

Builds m-uniform martingale trees, applies the fractional martingale
transform, decides the weak cancellation and integrand-cancellation
conditions, verifies and fits explicit Bellman supersolutions, and brackets
the sharp constant of the model inequality from both sides (value iteration
and annealing search from below, fitted supersolutions from above).
"""

from .phi import PhiFunction, builtin_phi
from .model import (
    ModelParams,
    Operator,
    SimpleMartingale,
    TransformResult,
    builtin_operator,
    zero_operator,
    node_values,
    martingale_differences,
    abs_level_means,
    l1_norm,
    abs_final_mean,
    riesz_potential,
    fractional_transform,
    phi_functional,
    glue_martingale,
)
from .cancellation import (
    DeltaVector,
    delta_vector,
    is_weakly_canceling,
    is_phi_canceling,
    delta_martingale,
    delta_refinement_martingale,
    necessity_ratios,
)
from .special import (
    psi,
    m_p,
    theta,
    theta_lemma_constant,
    epsilon_constant,
    slavin_check,
    scan_constants,
)
from .supersolution import (
    BellmanPoint,
    SupersolutionParams,
    SplitConfiguration,
    SupersolutionSpec,
    eval_G,
    check_boundary,
    main_inequality_gap,
    verify_supersolution,
    fit_constants,
    fit_two_sided,
    supermartingale_check,
    supermartingale_check_random,
    bellman_chain_bound,
)
from .search import SearchConfig, SearchState, adversarial_search
from .bellman_dp import GridSlice, dp_iterate, bracket_report, dp_witness

__version__ = "0.1.0"

__all__ = [
    "PhiFunction",
    "builtin_phi",
    "ModelParams",
    "Operator",
    "SimpleMartingale",
    "TransformResult",
    "builtin_operator",
    "zero_operator",
    "node_values",
    "martingale_differences",
    "abs_level_means",
    "l1_norm",
    "abs_final_mean",
    "riesz_potential",
    "fractional_transform",
    "phi_functional",
    "glue_martingale",
    "DeltaVector",
    "delta_vector",
    "is_weakly_canceling",
    "is_phi_canceling",
    "delta_martingale",
    "delta_refinement_martingale",
    "necessity_ratios",
    "psi",
    "m_p",
    "theta",
    "theta_lemma_constant",
    "epsilon_constant",
    "slavin_check",
    "scan_constants",
    "BellmanPoint",
    "SupersolutionParams",
    "SplitConfiguration",
    "SupersolutionSpec",
    "eval_G",
    "check_boundary",
    "main_inequality_gap",
    "verify_supersolution",
    "fit_constants",
    "fit_two_sided",
    "supermartingale_check",
    "supermartingale_check_random",
    "bellman_chain_bound",
    "SearchConfig",
    "SearchState",
    "adversarial_search",
    "GridSlice",
    "dp_iterate",
    "bracket_report",
    "dp_witness",
    "__version__",
]
