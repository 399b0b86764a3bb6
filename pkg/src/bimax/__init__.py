"""bimax: bilevel minimax solvers with stability and generalization measurement.

A library and experiment harness for upper-level minimization over a
lower-level min-max problem, solved by stochastic gradient descent-ascent in
single-timescale (SSGDA) and two-timescale (TSGDA-1, TSGDA-2) form, together
with estimators for on-average argument stability, generalization gap,
optimization error and excess risk, and a closed-form calculator for the
corresponding theoretical rate shapes.
"""

from .core import (
    ConstantsRegistry,
    DatasetPair,
    ParamTriple,
    StepSchedule,
    make_sibling,
    schedule_eval,
    triple_distance,
)
from .problems import (
    BmoProblem,
    QuadraticBmo,
    ReweightBmo,
    analytic_saddle,
    analytic_upper_objective,
    gradient_audit,
    project,
)
from .solvers import (
    DivergenceError,
    RunRecord,
    SolverSpec,
    run,
    run_ssgda,
    run_tsgda1,
    run_tsgda2,
)
from .analysis import (
    GapReport,
    StabilityEstimate,
    estimate_stability,
    measure_gap,
    rate_bound,
    gap_bound_from_stability,
)

__version__ = "0.1.0"

__all__ = [
    "ParamTriple", "DatasetPair", "StepSchedule", "ConstantsRegistry",
    "make_sibling", "schedule_eval", "triple_distance",
    "BmoProblem", "QuadraticBmo", "ReweightBmo", "analytic_saddle",
    "analytic_upper_objective", "gradient_audit", "project",
    "SolverSpec", "RunRecord", "DivergenceError",
    "run", "run_ssgda", "run_tsgda1", "run_tsgda2",
    "StabilityEstimate", "GapReport", "estimate_stability", "measure_gap",
    "gap_bound_from_stability", "rate_bound",
    "__version__",
]
