"""Empirical-likelihood fusion of internal data with external summary estimates."""

__version__ = "0.1.0"

from .exceptions import *  # noqa: F401,F403
from .interface import (  # noqa: F401
    ConstraintEval,
    ConstraintSet,
    ExplicitSigma,
    ExternalSummary,
    FunctionConstraints,
    InternalDataset,
    ModelDerivatives,
    ModelFit,
    ProfiledDerivatives,
    SandwichFromInternal,
    SemiparametricModel,
    StackedConstraints,
    finite_diff_jacobian,
    profile_nuisance,
)
from .parametric import (  # noqa: F401
    LinearModel,
    LogisticModel,
    fit_linear,
    fit_logistic,
    fit_reduced_models,
    linear_reduced_constraints,
    logistic_reduced_constraints,
    reduced_model_sandwich_fn,
)
from .cox import (  # noqa: F401
    CoxFit,
    CoxModel,
    Subgroup,
    cox_nuisance_blocks,
    cumulative_hazard,
    fit_cox,
    survival_constraints,
)
from .fusion import (  # noqa: F401
    FusionProblem,
    FusionResult,
    StudyBlock,
    assemble_A,
    assemble_l,
    fuse,
    fused_covariance,
    one_step_update,
    overlap_invariance_check,
    RedundancyConstraints,
    sandwich_sigma0,
    solve_initial_pi,
    stack_studies,
)
from .oracle import ELSolution, el_objective, inner_lagrange_solve, maximize_el  # noqa: F401
from .simulation import (  # noqa: F401
    MonteCarloReport,
    ScenarioConfig,
    calibrate_censoring,
    emit_report,
    generate_external_summary,
    generate_internal,
    run_monte_carlo,
)
