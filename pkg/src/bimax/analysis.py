"""Measurement of what the theory bounds, plus the closed-form rate shapes.

``estimate_stability`` Monte-Carlo estimates on-average argument stability by
rerunning the solver on single-sample-perturbed validation sets;
``measure_gap`` estimates empirical risk, population risk (test set),
generalization gap and, for the analytic quadratic problem, optimization
error and excess risk.  ``gap_bound_from_stability`` and ``rate_bound`` evaluate the
stability-to-gap conversions and the per-algorithm rate expressions with the
hidden constant set to 1, so rate overlays are shape comparisons only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .core import (
    ConstantsRegistry,
    dataset_seed,
    make_sibling,
    run_seed,
    sibling_seed,
    stream_seed,
    triple_distance,
    STREAM_SUBSAMPLE,
)
from .problems.base import BmoProblem
from .problems.quadratic import (
    QuadraticBmo,
    analytic_upper_objective,
    empirical_minimizer,
    population_minimizer,
    population_risk,
)
from .solvers import DivergenceError, SolverSpec, run

__all__ = ["StabilityEstimate", "GapReport", "estimate_stability", "measure_gap",
           "aggregate_stability", "gap_bound_from_stability", "rate_bound",
           "rate_bound_with_branch"]


def _summarize(values: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error over replicates (stderr 0 for a single one)."""
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, 0.0
    return mean, float(arr.std(ddof=1) / np.sqrt(arr.size))


@dataclass(frozen=True)
class StabilityEstimate:
    """Monte-Carlo estimate of on-average argument stability.

    ``beta_l1`` estimates the mean final-iterate distance over perturbed
    indices; ``beta_l2_sq`` the mean squared distance.  ``per_index`` holds
    (index, mean distance) pairs aggregated over replicates.
    """

    beta_l1: float
    beta_l1_stderr: float
    beta_l2_sq: float
    beta_l2_sq_stderr: float
    per_index: tuple
    replicates: int
    coupling: str
    failures: int = 0


@dataclass(frozen=True)
class GapReport:
    empirical_risk: float
    population_risk_est: float
    gap: float
    empirical_risk_stderr: float
    population_risk_stderr: float
    gap_stderr: float
    replicates: int
    failures: int = 0
    optimization_error: Optional[float] = None
    optimization_error_stderr: Optional[float] = None
    excess_risk: Optional[float] = None
    excess_risk_stderr: Optional[float] = None


def aggregate_stability(rep_l1: Sequence[float], rep_l2: Sequence[float],
                        per_index: tuple = (), coupling: str = "coupled",
                        failures: int = 0) -> StabilityEstimate:
    """Aggregate per-replicate index-averaged distances into an estimate.

    Inputs are per-replicate means of the distances and squared distances over
    the perturbed indices; by Jensen the resulting beta_l1 never exceeds
    sqrt(beta_l2_sq).
    """
    b1, se1 = _summarize(rep_l1)
    b2, se2 = _summarize(rep_l2)
    return StabilityEstimate(beta_l1=b1, beta_l1_stderr=se1, beta_l2_sq=b2,
                             beta_l2_sq_stderr=se2, per_index=tuple(per_index),
                             replicates=len(list(rep_l1)), coupling=coupling,
                             failures=failures)


def _pick_indices(indices, m1: int, root_seed: int, replicate: int) -> list[int]:
    if indices is None:
        n = min(m1, 25)
        rng = np.random.default_rng(stream_seed(root_seed, STREAM_SUBSAMPLE, replicate))
        return sorted(int(i) for i in rng.choice(m1, size=n, replace=False))
    if isinstance(indices, str):
        if indices != "all":
            raise ValueError(f"indices must be a sequence, None or 'all', got {indices!r}")
        return list(range(m1))
    out = sorted(int(i) for i in indices)
    if not out:
        raise ValueError("indices must be nonempty")
    if out[0] < 0 or out[-1] >= m1:
        raise ValueError(f"indices must lie in [0, {m1})")
    return out


def estimate_stability(problem: BmoProblem, spec: SolverSpec, m1: int, m2: int,
                       indices: Union[None, str, Sequence[int]] = None,
                       replicates: int = 20, coupling: str = "coupled",
                       seed: int = 0, m_test: int = 1,
                       backend: str = "auto") -> StabilityEstimate:
    """Estimate stability by rerunning the solver on sibling datasets.

    Per replicate: draw a dataset, train, then for each chosen index build the
    sibling (one validation sample independently redrawn) and retrain.  In
    ``coupled`` mode the rerun reuses the base run's seed so the sample-index
    stream and initialization are identical; ``uncoupled`` redraws them.  The
    index average over a uniformly chosen subset is an unbiased estimator of
    the full (1/m1)-sum; a replicate whose runs diverge is dropped and counted
    in ``failures``.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    if coupling not in ("coupled", "uncoupled"):
        raise ValueError(f"coupling must be 'coupled' or 'uncoupled', got {coupling!r}")

    rep_l1, rep_l2 = [], []
    per_index: dict[int, list[float]] = {}
    failures = 0
    for r in range(replicates):
        data = problem.make_dataset(m1, m2, m_test, dataset_seed(seed, r))
        base_seed = run_seed(seed, r)
        idx = _pick_indices(indices, m1, seed, r)
        try:
            base = run(problem, data, spec.with_seed(base_seed), backend=backend)
            dists = []
            for i in idx:
                sib = make_sibling(data, i, sibling_seed(seed, r, i))
                rerun_seed = base_seed if coupling == "coupled" \
                    else run_seed(seed, r, variant=1 + i)
                rerun = run(problem, sib, spec.with_seed(rerun_seed), backend=backend)
                dists.append((i, triple_distance(base.final, rerun.final)))
        except DivergenceError:
            failures += 1
            continue
        ds = np.array([d for _, d in dists])
        rep_l1.append(float(ds.mean()))
        rep_l2.append(float(np.mean(ds ** 2)))
        for i, d in dists:
            per_index.setdefault(i, []).append(d)

    if not rep_l1:
        raise RuntimeError(f"all {replicates} replicates diverged")
    agg = tuple(sorted((i, float(np.mean(v))) for i, v in per_index.items()))
    return aggregate_stability(rep_l1, rep_l2, per_index=agg, coupling=coupling,
                               failures=failures)


def measure_gap(problem: BmoProblem, spec: SolverSpec, m1: int, m2: int,
                replicates: int = 20, seed: int = 0,
                m_test: Optional[int] = None, backend: str = "auto") -> GapReport:
    """Estimate empirical risk, population risk and their gap at the output.

    Risks are evaluated at the solver's final (x, y, z) jointly: empirical on
    the validation set, population on the held-out test set (10x the
    validation size by default).  For the quadratic problem the analytic
    empirical minimizer and population risk add optimization error and excess
    risk.  ``gap`` equals ``population_risk_est - empirical_risk`` exactly.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    if m_test is None:
        m_test = 10 * m1

    analytic = isinstance(problem, QuadraticBmo)
    emp, pop, gaps, opt, exc = [], [], [], [], []
    failures = 0
    for r in range(replicates):
        data = problem.make_dataset(m1, m2, m_test, dataset_seed(seed, r))
        try:
            rec = run(problem, data, spec.with_seed(run_seed(seed, r)), backend=backend)
        except DivergenceError:
            failures += 1
            continue
        f = rec.final
        e = problem.upper_value(f.x, f.y, f.z, data.validation)
        p = problem.upper_value(f.x, f.y, f.z, data.test)
        emp.append(e)
        pop.append(p)
        gaps.append(p - e)
        if analytic:
            xhat = empirical_minimizer(problem, data)
            best_emp, _ = analytic_upper_objective(problem, xhat, data, "validation")
            opt.append(e - best_emp)
            exc.append(population_risk(problem, f.x, f.y, f.z)
                       - population_minimizer(problem)[1])

    if not emp:
        raise RuntimeError(f"all {replicates} replicates diverged")
    e_mean, e_se = _summarize(emp)
    p_mean, p_se = _summarize(pop)
    _, g_se = _summarize(gaps)
    report = GapReport(empirical_risk=e_mean, population_risk_est=p_mean,
                       gap=p_mean - e_mean, empirical_risk_stderr=e_se,
                       population_risk_stderr=p_se, gap_stderr=g_se,
                       replicates=len(emp), failures=failures)
    if analytic:
        o_mean, o_se = _summarize(opt)
        x_mean, x_se = _summarize(exc)
        report = GapReport(**{**report.__dict__,
                              "optimization_error": o_mean,
                              "optimization_error_stderr": o_se,
                              "excess_risk": x_mean,
                              "excess_risk_stderr": x_se})
    return report


# ---------------------------------------------------------------------------
# Stability-to-generalization converters
# ---------------------------------------------------------------------------


def gap_bound_from_stability(variant: str, beta: StabilityEstimate,
                     constants: ConstantsRegistry,
                     empirical_risk: Optional[float] = None,
                     gamma: Optional[float] = None) -> float:
    """Gap bound from a stability estimate.

    I    l_f * beta
    II   (L_f / gamma) * risk + (L_f + gamma) * beta^2 / 2      (risk >= 0)
    III  (c^2 / (2 gamma)) * risk^(2a/(1+a)) + gamma * beta^2 / 2

    Variant III uses the registered Hoelder pair (alpha, tau) and the
    separately supplied companion constant ``c_hoelder``.
    """
    if variant == "I":
        return constants.l_f * beta.beta_l1
    if variant not in ("II", "III"):
        raise ValueError(f"variant must be 'I', 'II' or 'III', got {variant!r}")
    if gamma is None or gamma <= 0:
        raise ValueError("variants II/III require gamma > 0")
    if empirical_risk is None or empirical_risk < 0:
        raise ValueError("variants II/III require a nonnegative empirical risk")
    if variant == "II":
        L = constants.L_f
        return (L / gamma) * empirical_risk + 0.5 * (L + gamma) * beta.beta_l2_sq
    if constants.hoelder is None:
        raise ValueError("variant III requires the registered 'hoelder' pair (alpha, tau)")
    if constants.c_hoelder is None:
        raise ValueError("variant III requires the supplied constant 'c_hoelder'")
    alpha, _ = constants.hoelder
    c = constants.c_hoelder
    return (c ** 2 / (2.0 * gamma)) * empirical_risk ** (2.0 * alpha / (1.0 + alpha)) \
        + 0.5 * gamma * beta.beta_l2_sq


# ---------------------------------------------------------------------------
# Closed-form rate shapes (hidden constants set to 1)
# ---------------------------------------------------------------------------


def _require(cond: bool, msg: str):
    if not cond:
        raise ValueError(msg)


def rate_bound_with_branch(algorithm: str, quantity: str, *, T: int = 1,
                           K: int = 1, Q: int = 1, m1: int = 1,
                           step_constants: Optional[dict] = None,
                           constants: Optional[ConstantsRegistry] = None
                           ) -> tuple[float, str]:
    """Leading rate expression and a branch label; exact to floating point."""
    sc = dict(step_constants or {})
    algorithm = algorithm.lower()
    _require(algorithm in ("ssgda", "tsgda1", "tsgda2"),
             f"unknown algorithm {algorithm!r}")
    _require(quantity in ("generalization", "optimization", "excess"),
             f"unknown quantity {quantity!r}")
    _require(T >= 1 and K >= 1 and Q >= 1 and m1 >= 1,
             "T, K, Q and m1 must be >= 1")

    if algorithm == "ssgda":
        if quantity == "generalization":
            _require("c1" in sc, "missing step constant c1")
            c1 = float(sc["c1"])
            _require(c1 > 0, "violated condition: c1 > 0")
            if c1 < 1.0 / 7.0:
                return T / m1, "T/m1"
            if c1 == 1.0 / 7.0:
                return T * math.log(T) / m1, "T*ln(T)/m1"
            return T ** (7.0 * c1) / m1, "T^(7c1)/m1"
        if quantity == "optimization":
            _require("eta_prime" in sc, "missing step constant eta_prime")
            eta = float(sc["eta_prime"])
            _require(eta > 0, "violated condition: eta_prime > 0")
            _require(constants is not None and constants.V is not None,
                     "missing constant V (bound on E||x0 - xhat||)")
            return constants.V / (eta * T) + eta * constants.l ** 2, "V/(eta'T)+eta'l^2"
        return 1.0 / math.sqrt(m1), "1/sqrt(m1)"

    _require(quantity == "generalization",
             f"{algorithm} exposes only the generalization bound")
    if algorithm == "tsgda1":
        _require("c2" in sc, "missing step constant c2")
        c2 = float(sc["c2"])
        c4 = float(sc["c4"]) if "c4" in sc else max(c2, float(sc.get("c3", c2)))
        for name, v in (("c2", c2), ("c4", c4)):
            _require(0 < v < 1, f"violated condition: {name} in (0,1)")
        value = math.sqrt(3.0) ** T * T ** (c2 + 1.0) * K ** ((c4 + 1.0) * T + 1.0) / m1
        return value, "sqrt(3)^T*T^(c2+1)*K^((c4+1)T+1)/m1"

    _require("c5" in sc, "missing step constant c5")
    c5 = float(sc["c5"])
    if "c8" in sc:
        c8 = float(sc["c8"])
    else:
        c8 = max(c5, float(sc.get("c6", c5)), float(sc.get("c7", c5)))
    for name, v in (("c5", c5), ("c8", c8)):
        _require(0 < v < 1, f"violated condition: {name} in (0,1)")
    inner = max(K, Q)
    value = math.sqrt(3.0) ** T * T ** (c5 + 1.0) * inner ** ((c8 + 1.0) * T + 1.0) / m1
    return value, "sqrt(3)^T*T^(c5+1)*max(K,Q)^((c8+1)T+1)/m1"


def rate_bound(algorithm: str, quantity: str, *, T: int = 1, K: int = 1,
               Q: int = 1, m1: int = 1, step_constants: Optional[dict] = None,
               constants: Optional[ConstantsRegistry] = None) -> float:
    return rate_bound_with_branch(algorithm, quantity, T=T, K=K, Q=Q, m1=m1,
                                  step_constants=step_constants,
                                  constants=constants)[0]
