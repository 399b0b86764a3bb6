"""Built-in bilevel minimax problems and the problem interface."""

from .base import AuditReport, BmoProblem, gradient_audit, project
from .quadratic import (
    QuadraticBmo,
    analytic_saddle,
    analytic_upper_objective,
    empirical_minimizer,
    population_minimizer,
    population_risk,
    saddle_jacobian,
)
from .reweight import ReweightBmo

__all__ = [
    "BmoProblem",
    "AuditReport",
    "gradient_audit",
    "project",
    "QuadraticBmo",
    "ReweightBmo",
    "analytic_saddle",
    "saddle_jacobian",
    "analytic_upper_objective",
    "empirical_minimizer",
    "population_minimizer",
    "population_risk",
]

PROBLEM_KINDS = {"quadratic": QuadraticBmo, "reweight": ReweightBmo}
