"""Problem interface: per-sample losses, the six partial gradients, projection
onto the bounded domain, and a finite-difference audit of the supplied oracles.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import ConstantsRegistry, DatasetPair, ParamTriple, draw_dataset

__all__ = ["BmoProblem", "project", "gradient_audit", "AuditReport"]


class BmoProblem(abc.ABC):
    """A bilevel minimax problem.

    The upper loss f(x, y, z; xi) is minimized over x subject to (y, z)
    solving min_y max_z of the mean lower loss g(x, y, z; zeta).  Gradient
    methods take batches of samples (2-D arrays, one sample per row) and all
    gradient methods return the batch mean.

    Subclasses set ``d_x, d_y, d_z``, ``upper_sample_dim``, ``lower_sample_dim``,
    ``radii`` (projection radii, or None for an unconstrained domain),
    ``constants`` (a ConstantsRegistry valid on the projected domain) and
    ``upper_nonnegative`` (whether f >= 0 pointwise, a prerequisite of the
    squared-stability gap converters).
    """

    d_x: int
    d_y: int
    d_z: int
    upper_sample_dim: int
    lower_sample_dim: int
    radii: Optional[tuple[float, float, float]] = None
    constants: ConstantsRegistry
    upper_nonnegative: bool = False

    # -- sampling ----------------------------------------------------------

    @abc.abstractmethod
    def sample_upper(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n upper-level samples xi, shape (n, upper_sample_dim)."""

    @abc.abstractmethod
    def sample_lower(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n lower-level samples zeta, shape (n, lower_sample_dim)."""

    def make_dataset(self, m1: int, m2: int, m_test: int, seed: int) -> DatasetPair:
        return draw_dataset(self.sample_upper, self.sample_lower, m1, m2, m_test, seed)

    # -- losses and partial gradients (batch means) ------------------------

    @abc.abstractmethod
    def upper_value(self, x, y, z, xi: np.ndarray) -> float: ...

    @abc.abstractmethod
    def upper_grad_x(self, x, y, z, xi: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def upper_grad_y(self, x, y, z, xi: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def upper_grad_z(self, x, y, z, xi: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def lower_value(self, x, y, z, zeta: np.ndarray) -> float: ...

    @abc.abstractmethod
    def lower_grad_x(self, x, y, z, zeta: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def lower_grad_y(self, x, y, z, zeta: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def lower_grad_z(self, x, y, z, zeta: np.ndarray) -> np.ndarray: ...

    # -- optional fast path -------------------------------------------------

    def fast_oracle(self):
        """Compiled gradient oracle for the solver kernels, or None."""
        return None

    # -- config echo ---------------------------------------------------------

    def describe(self) -> dict:
        """JSON-safe summary recorded in experiment artifacts."""
        return {"kind": type(self).__name__,
                "dims": [self.d_x, self.d_y, self.d_z],
                "radii": list(self.radii) if self.radii else None}


# the slack makes re-projection a bitwise no-op even when the rescaled norm
# lands an ulp above the radius
_PROJECT_SLACK = 1.0 + 1e-12


def _project_block(u: np.ndarray, radius: float) -> np.ndarray:
    n = np.linalg.norm(u)
    if n <= radius * _PROJECT_SLACK:
        return u
    return u * (radius / n)


def project(problem: BmoProblem, iterate: ParamTriple) -> ParamTriple:
    """Radially project each block onto its declared ball; identity without radii."""
    if problem.radii is None:
        return iterate
    rx, ry, rz = problem.radii
    return ParamTriple(_project_block(iterate.x, rx),
                       _project_block(iterate.y, ry),
                       _project_block(iterate.z, rz))


# ---------------------------------------------------------------------------
# Gradient audit
# ---------------------------------------------------------------------------

_PARTIALS = (
    ("upper_grad_x", "upper_value", "x"),
    ("upper_grad_y", "upper_value", "y"),
    ("upper_grad_z", "upper_value", "z"),
    ("lower_grad_x", "lower_value", "x"),
    ("lower_grad_y", "lower_value", "y"),
    ("lower_grad_z", "lower_value", "z"),
)


@dataclass
class AuditReport:
    passed: bool
    trials: int
    max_rel_err: float
    worst_partial: str
    failures: list = field(default_factory=list)
    empirical_l_f: float = 0.0
    empirical_l_g: float = 0.0
    empirical_L_f: float = 0.0
    empirical_L_g: float = 0.0
    modulus_exceedances: list = field(default_factory=list)

    def raise_if_failed(self):
        if not self.passed:
            name, point, err = self.failures[0]
            raise AssertionError(
                f"gradient audit failed for {name} at point {point} "
                f"(relative error {err:.3g}); {len(self.failures)} mismatch(es) total")


def _random_triple(problem: BmoProblem, rng: np.random.Generator) -> tuple:
    radii = problem.radii or (1.0, 1.0, 1.0)
    dims = (problem.d_x, problem.d_y, problem.d_z)
    out = []
    for d, r in zip(dims, radii):
        v = rng.standard_normal(d)
        n = np.linalg.norm(v)
        # uniform radius fraction keeps points spread through the ball interior
        scale = rng.uniform(0.0, 0.9) * r / n if n > 0 else 0.0
        out.append(v * scale)
    return tuple(out)


def _central_diff(value_fn, x, y, z, sample, block: str, h: float) -> np.ndarray:
    parts = {"x": x.copy(), "y": y.copy(), "z": z.copy()}
    v = parts[block]
    grad = np.empty_like(v)
    for j in range(v.size):
        orig = v[j]
        v[j] = orig + h
        up = value_fn(parts["x"], parts["y"], parts["z"], sample)
        v[j] = orig - h
        down = value_fn(parts["x"], parts["y"], parts["z"], sample)
        v[j] = orig
        grad[j] = (up - down) / (2.0 * h)
    return grad


def gradient_audit(problem: BmoProblem, trials: int, seed: int,
                   rel_tol: float = 1e-5, modulus_samples: int = 0,
                   modulus_margin: float = 0.01) -> AuditReport:
    """Check every declared partial gradient against central finite differences.

    At `trials` random interior points with one random sample each, each of
    the six partials must match the central difference of its loss with step
    h = 1e-6 * (1 + ||point||) to relative error <= rel_tol (relative error
    uses a unit floor in the denominator so near-zero gradients are compared
    absolutely).  With ``modulus_samples`` > 0, secant ratios of losses and
    stacked gradients are also sampled and any exceedance of the registered
    moduli beyond ``modulus_margin`` is reported.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    failures = []
    max_err, worst = 0.0, ""

    for _ in range(trials):
        x, y, z = _random_triple(problem, rng)
        xi = problem.sample_upper(rng, 1)
        zeta = problem.sample_lower(rng, 1)
        point_norm = float(np.sqrt(x @ x + y @ y + z @ z))
        h = 1e-6 * (1.0 + point_norm)
        for grad_name, value_name, block in _PARTIALS:
            sample = xi if value_name == "upper_value" else zeta
            analytic = getattr(problem, grad_name)(x, y, z, sample)
            fd = _central_diff(getattr(problem, value_name), x, y, z, sample, block, h)
            err = float(np.linalg.norm(analytic - fd) / max(1.0, np.linalg.norm(fd)))
            if err > max_err:
                max_err, worst = err, grad_name
            if err > rel_tol:
                failures.append((grad_name, np.round(np.concatenate([x, y, z]), 4), err))

    report = AuditReport(passed=not failures, trials=trials, max_rel_err=max_err,
                         worst_partial=worst, failures=failures)

    if modulus_samples > 0:
        report = _audit_moduli(problem, rng, modulus_samples, modulus_margin, report)
    return report


def _stacked_grad(problem, which: str, x, y, z, sample) -> np.ndarray:
    g = [getattr(problem, f"{which}_grad_{b}")(x, y, z, sample) for b in "xyz"]
    return np.concatenate(g)


def _audit_moduli(problem, rng, samples: int, margin: float, report: AuditReport) -> AuditReport:
    reg = problem.constants
    est = {"l_f": 0.0, "l_g": 0.0, "L_f": 0.0, "L_g": 0.0}
    for _ in range(samples):
        pa = _random_triple(problem, rng)
        pb = _random_triple(problem, rng)
        dist = float(np.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(pa, pb))))
        if dist < 1e-12:
            continue
        xi = problem.sample_upper(rng, 1)
        zeta = problem.sample_lower(rng, 1)
        for which, sample, lk, Lk in (("upper", xi, "l_f", "L_f"),
                                      ("lower", zeta, "l_g", "L_g")):
            value = getattr(problem, f"{which}_value")
            dv = abs(value(*pa, sample) - value(*pb, sample))
            dg = float(np.linalg.norm(_stacked_grad(problem, which, *pa, sample)
                                      - _stacked_grad(problem, which, *pb, sample)))
            est[lk] = max(est[lk], dv / dist)
            est[Lk] = max(est[Lk], dg / dist)
    report.empirical_l_f, report.empirical_l_g = est["l_f"], est["l_g"]
    report.empirical_L_f, report.empirical_L_g = est["L_f"], est["L_g"]
    for key, registered in (("l_f", reg.l_f), ("l_g", reg.l_g),
                            ("L_f", reg.L_f), ("L_g", reg.L_g)):
        if est[key] > registered * (1.0 + margin):
            report.modulus_exceedances.append(
                f"{key}: sampled {est[key]:.4g} exceeds registered {registered:.4g}")
    return report
