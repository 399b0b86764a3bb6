"""Parity between the compiled kernels and the pure-Python loops."""

import numpy as np
import pytest

from bimax import QuadraticBmo, ReweightBmo
from bimax import _fast
from bimax.core import StepSchedule
from bimax.solvers import SolverSpec, run, select_backend

from conftest import constant_spec

needs_fast = pytest.mark.skipif(not _fast.AVAILABLE,
                                reason="compiled kernels not built")


def _max_rel_gap(r1, r2):
    worst = 0.0
    for (_, a), (_, b) in zip(r1.snapshots, r2.snapshots):
        num = np.linalg.norm(a.stacked() - b.stacked())
        den = 1.0 + np.linalg.norm(b.stacked())
        worst = max(worst, num / den)
    worst = max(worst, float(np.max(np.abs(r1.losses - r2.losses)
                                    / (1.0 + np.abs(r2.losses)), initial=0.0)))
    return worst


@needs_fast
@pytest.mark.parametrize("algorithm,K,Q", [("ssgda", 1, 1), ("tsgda1", 5, 1),
                                           ("tsgda2", 4, 3)])
@pytest.mark.parametrize("problem_kind", ["quadratic", "reweight"])
def test_backends_agree(problem_kind, algorithm, K, Q):
    if problem_kind == "quadratic":
        problem = QuadraticBmo.random(seed=11)
    else:
        problem = ReweightBmo(seed=11)
    data = problem.make_dataset(25, 30, 40, seed=6)
    spec = SolverSpec(algorithm, T=30, K=K, Q=Q,
                      eta=StepSchedule.exponential(0.05, 0.97),
                      gamma1=StepSchedule.constant(0.1),
                      gamma2=StepSchedule.inverse_t(0.8, 2.0),
                      batch_size_upper=2, batch_size_lower=3, seed=13,
                      init="gaussian", record_every=3)
    fast = run(problem, data, spec, backend="fast")
    slow = run(problem, data, spec, backend="python")
    assert fast.backend == "fast" and slow.backend == "python"
    assert _max_rel_gap(fast, slow) < 1e-12


@needs_fast
def test_backend_selection(quad11, reweight11):
    spec = constant_spec(T=2)
    assert select_backend(quad11, spec) == "fast"
    assert select_backend(reweight11, spec) == "fast"
    implicit = constant_spec(T=2, hypergradient_mode="exact_implicit")
    assert select_backend(quad11, implicit) == "python"
    with pytest.raises(RuntimeError, match="unavailable"):
        select_backend(quad11, implicit, backend="fast")
    with pytest.raises(ValueError, match="unknown backend"):
        select_backend(quad11, spec, backend="numba")


@needs_fast
def test_full_batch_parity(quad11):
    data = quad11.make_dataset(12, 18, 12, seed=2)
    spec = constant_spec(algorithm="tsgda2", T=5, K=20, Q=10, sampling="full",
                         eta=0.02, gamma=0.2)
    fast = run(quad11, data, spec, backend="fast")
    slow = run(quad11, data, spec, backend="python")
    assert _max_rel_gap(fast, slow) < 1e-12


def test_python_backend_always_available(quad11, quad11_data):
    rec = run(quad11, quad11_data, constant_spec(T=3), backend="python")
    assert rec.backend == "python"
