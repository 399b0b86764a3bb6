import numpy as np
import pytest
from dataclasses import replace

from bimax import DivergenceError, QuadraticBmo
from bimax.core import StepSchedule
from bimax.problems.quadratic import analytic_saddle
from bimax.solvers import SolverSpec, run, run_ssgda, run_tsgda1, run_tsgda2

from conftest import constant_spec, zero_forcing_quadratic


def _trajectories_equal(r1, r2):
    if len(r1.snapshots) != len(r2.snapshots):
        return False
    for (t1, a), (t2, b) in zip(r1.snapshots, r2.snapshots):
        if t1 != t2:
            return False
        if not (np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
                and np.array_equal(a.z, b.z)):
            return False
    return np.array_equal(r1.losses, r2.losses)


# ---------------------------------------------------------------------------
# Spec validation
# ---------------------------------------------------------------------------


def test_spec_validation():
    sched = StepSchedule.constant(0.1)
    with pytest.raises(ValueError, match="unknown algorithm"):
        SolverSpec("sgd", T=1, eta=sched, gamma1=sched, gamma2=sched)
    with pytest.raises(ValueError, match="K = Q = 1"):
        SolverSpec("ssgda", T=1, K=2, eta=sched, gamma1=sched, gamma2=sched)
    with pytest.raises(ValueError, match="Q = 1"):
        SolverSpec("tsgda1", T=1, Q=3, eta=sched, gamma1=sched, gamma2=sched)
    with pytest.raises(ValueError, match="T must be >= 0"):
        SolverSpec("ssgda", T=-1, eta=sched, gamma1=sched, gamma2=sched)
    with pytest.raises(ValueError, match="sampling"):
        SolverSpec("ssgda", T=1, eta=sched, gamma1=sched, gamma2=sched,
                   sampling="bootstrap")


def test_algorithm_wrappers_check_spec(quad11, quad11_data):
    spec = constant_spec(algorithm="tsgda1", T=2, K=2)
    with pytest.raises(ValueError, match="expected 'ssgda'"):
        run_ssgda(quad11, quad11_data, spec)


# ---------------------------------------------------------------------------
# Fixed points and determinism
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("algorithm,K,Q", [("ssgda", 1, 1), ("tsgda1", 7, 1),
                                           ("tsgda2", 4, 5)])
def test_zero_gradient_problem_is_fixed_point(algorithm, K, Q):
    p = zero_forcing_quadratic(d=3)
    data = p.make_dataset(6, 6, 6, seed=1)
    rec = run(p, data, constant_spec(algorithm=algorithm, T=10, K=K, Q=Q, seed=5))
    assert np.array_equal(rec.final.x, np.zeros(3))
    assert np.array_equal(rec.final.y, np.zeros(3))
    assert np.array_equal(rec.final.z, np.zeros(3))
    assert np.all(rec.losses == 0.0)


@pytest.mark.parametrize("algorithm,K,Q", [("ssgda", 1, 1), ("tsgda1", 3, 1),
                                           ("tsgda2", 3, 2)])
def test_identical_runs_are_bitwise_identical(quad11, quad11_data, algorithm, K, Q):
    spec = constant_spec(algorithm=algorithm, T=15, K=K, Q=Q, seed=123)
    r1 = run(quad11, quad11_data, spec)
    r2 = run(quad11, quad11_data, spec)
    assert _trajectories_equal(r1, r2)
    assert np.array_equal(r1.final.x, r2.final.x)


def test_t_zero_returns_initialization(quad11, quad11_data):
    rec = run(quad11, quad11_data, constant_spec(T=0))
    assert np.array_equal(rec.final.x, np.zeros(quad11.d_x))
    assert rec.losses.size == 0
    assert rec.snapshots[0][0] == 0


def test_gaussian_init_is_seeded(quad11, quad11_data):
    spec = constant_spec(T=1, seed=9, init="gaussian", init_scale=0.5)
    r1 = run(quad11, quad11_data, spec)
    r2 = run(quad11, quad11_data, spec)
    assert np.array_equal(r1.snapshots[0][1].x, r2.snapshots[0][1].x)
    assert np.linalg.norm(r1.snapshots[0][1].x) > 0


# ---------------------------------------------------------------------------
# SSGDA == TSGDA-1 with K=1
# ---------------------------------------------------------------------------


def random_spec(rng) -> SolverSpec:
    kinds = [StepSchedule.constant(float(rng.uniform(0.01, 0.1))),
             StepSchedule.exponential(float(rng.uniform(0.005, 0.05)),
                                      float(rng.uniform(0.9, 1.0))),
             StepSchedule.inverse_t(float(rng.uniform(0.1, 1.0)),
                                    float(rng.uniform(1.0, 4.0)))]
    pick = lambda: kinds[rng.integers(0, len(kinds))]
    return SolverSpec("ssgda", T=int(rng.integers(5, 40)), eta=pick(),
                      gamma1=pick(), gamma2=pick(),
                      batch_size_upper=int(rng.integers(1, 4)),
                      batch_size_lower=int(rng.integers(1, 4)),
                      seed=int(rng.integers(0, 2 ** 31)),
                      init="gaussian" if rng.integers(0, 2) else "zero")


def test_ssgda_equals_tsgda1_with_k1(quad11, quad11_data):
    rng = np.random.default_rng(2024)
    for _ in range(10):
        spec = random_spec(rng)
        r1 = run_ssgda(quad11, quad11_data, spec)
        r2 = run_tsgda1(quad11, quad11_data, replace(spec, algorithm="tsgda1"))
        assert _trajectories_equal(r1, r2)


# ---------------------------------------------------------------------------
# Inner-loop behaviour against the analytic saddle
# ---------------------------------------------------------------------------


def test_ssgda_full_batch_tracks_saddle():
    one = np.eye(1)
    p = QuadraticBmo(A=one, B=one, C=0.2 * one, P=one, Q=-one, M=one, lam=0.2,
                     sigma_upper=0.0, sigma_lower=0.0)
    data = p.make_dataset(4, 4, 4, seed=0)
    spec = constant_spec(T=200, eta=0.1, gamma=0.1, sampling="full")
    rec = run_ssgda(p, data, spec)
    x_prev = rec.snapshots[-2][1]
    ys, zs = analytic_saddle(p, x_prev.x, data.training)
    assert abs(rec.final.y[0] - ys[0]) <= 1e-4
    assert abs(rec.final.z[0] - zs[0]) <= 1e-4


def _inner_residual(p, x, y, z, training):
    gy = p.lower_grad_y(x, y, z, training)
    gz = p.lower_grad_z(x, y, z, training)
    return float(np.linalg.norm(np.concatenate([gy, gz])))


def test_tsgda1_inner_loop_reduces_residual(quad11, quad11_data):
    spec = constant_spec(algorithm="tsgda1", T=6, K=50, eta=0.05, gamma=0.2,
                         sampling="full", seed=3)
    rec = run_tsgda1(quad11, quad11_data, spec)
    snaps = dict((t, s) for t, s in rec.snapshots)
    training = quad11_data.training
    for t in range(1, spec.T):
        x_t = snaps[t].x  # x seen by the inner loops of outer iteration t
        start = _inner_residual(quad11, x_t, snaps[t].y, snaps[t].z, training)
        end = _inner_residual(quad11, x_t, snaps[t + 1].y, snaps[t + 1].z, training)
        assert end < start


def test_tsgda2_inner_loops_approach_saddle(quad11, quad11_data):
    spec = constant_spec(algorithm="tsgda2", T=6, K=200, Q=200, eta=0.01,
                         gamma=0.3, sampling="full", seed=2)
    rec = run_tsgda2(quad11, quad11_data, spec)
    x_prev = rec.snapshots[-2][1].x
    ys, zs = analytic_saddle(quad11, x_prev, quad11_data.training)
    dist = np.sqrt(np.sum((rec.final.y - ys) ** 2) + np.sum((rec.final.z - zs) ** 2))
    assert dist <= 1e-3


def test_tsgda2_equals_tsgda1_when_decoupled_noise_free():
    # C = 0 and zero noise: the two batch layouts see identical gradients
    d = np.eye(2)
    p = QuadraticBmo(A=d, B=d, C=0 * d, P=d, Q=-d, M=d, lam=0.1,
                     sigma_upper=0.0, sigma_lower=0.0)
    data = p.make_dataset(6, 6, 6, seed=4)
    s2 = constant_spec(algorithm="tsgda2", T=12, K=1, Q=1, seed=8)
    s1 = constant_spec(algorithm="tsgda1", T=12, K=1, seed=8)
    r2 = run_tsgda2(p, data, s2)
    r1 = run_tsgda1(p, data, s1)
    for (_, a), (_, b) in zip(r1.snapshots, r2.snapshots):
        assert np.allclose(a.stacked(), b.stacked(), atol=1e-14)


# ---------------------------------------------------------------------------
# Projection, contraction, divergence
# ---------------------------------------------------------------------------


def test_iterates_respect_projection_radii():
    p = QuadraticBmo.random(seed=7, radii=(0.5, 0.4, 0.3))
    data = p.make_dataset(10, 10, 10, seed=1)
    rec = run_ssgda(p, data, constant_spec(T=40, eta=0.5, gamma=0.5, seed=2))
    for _, s in rec.snapshots:
        assert np.linalg.norm(s.x) <= 0.5 * (1 + 1e-9)
        assert np.linalg.norm(s.y) <= 0.4 * (1 + 1e-9)
        assert np.linalg.norm(s.z) <= 0.3 * (1 + 1e-9)


def test_inner_recursion_contracts_geometrically(quad11, quad11_data):
    # fixed x, full batch, constant step below 1/L: distance to the saddle
    # shrinks by a stable factor per alternating sweep
    x = np.zeros(quad11.d_x)
    ys, zs = analytic_saddle(quad11, x, quad11_data.training)
    y = np.zeros(quad11.d_y)
    z = np.zeros(quad11.d_z)
    step = 0.3
    dists = [np.sqrt(np.sum((y - ys) ** 2) + np.sum((z - zs) ** 2))]
    for _ in range(40):
        y = y - step * quad11.lower_grad_y(x, y, z, quad11_data.training)
        z = z + step * quad11.lower_grad_z(x, y, z, quad11_data.training)
        dists.append(np.sqrt(np.sum((y - ys) ** 2) + np.sum((z - zs) ** 2)))
    dists = np.array(dists)
    ratios = dists[1:] / dists[:-1]
    assert np.all(ratios < 0.9)


def test_divergence_raises_with_iteration_index(quad11, quad11_data):
    spec = constant_spec(T=400, eta=1e5, gamma=1e5, seed=0)
    p = QuadraticBmo.random(seed=7, radii=(1e30, 1e30, 1e30))
    with pytest.raises(DivergenceError) as err:
        run_ssgda(p, quad11_data, spec)
    assert err.value.t >= 0
    assert "diverged at outer iteration" in str(err.value)


# ---------------------------------------------------------------------------
# Hypergradient modes
# ---------------------------------------------------------------------------


def test_exact_implicit_requires_analytic_problem(reweight11):
    data = reweight11.make_dataset(6, 6, 6, seed=0)
    spec = constant_spec(T=2, hypergradient_mode="exact_implicit")
    with pytest.raises(ValueError, match="exact_implicit"):
        run(reweight11, data, spec)


def test_exact_implicit_monotone_loss_noise_free():
    p = QuadraticBmo.random(seed=11, sigma_upper=0.0, sigma_lower=0.0)
    data = p.make_dataset(8, 8, 8, seed=1)
    spec = constant_spec(T=60, eta=0.05, gamma=0.3, sampling="full",
                         hypergradient_mode="exact_implicit")
    rec = run_ssgda(p, data, spec)
    assert rec.backend == "python"  # compiled path only serves direct_partial
    diffs = np.diff(rec.losses)
    assert np.all(diffs <= 1e-12)


def test_record_every_stride(quad11, quad11_data):
    rec = run(quad11, quad11_data, constant_spec(T=20, record_every=5))
    assert [t for t, _ in rec.snapshots] == [0, 5, 10, 15, 20]
    final_t, final_state = rec.snapshots[-1]
    assert np.array_equal(final_state.x, rec.final.x)
