import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bimax import QuadraticBmo, ReweightBmo
from bimax.core import ParamTriple
from bimax.problems import gradient_audit, project
from bimax.problems.quadratic import (
    analytic_saddle,
    analytic_upper_objective,
    empirical_minimizer,
    population_minimizer,
    population_risk,
    saddle_jacobian,
)

from conftest import zero_forcing_quadratic


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def test_rejects_non_spd_lower_matrices():
    d = np.eye(2)
    with pytest.raises(ValueError, match="positive definite"):
        QuadraticBmo(A=-d, B=d, C=0 * d, P=0 * d, Q=0 * d, M=0 * d)
    with pytest.raises(ValueError, match="symmetric"):
        QuadraticBmo(A=np.array([[1.0, 0.5], [0.0, 1.0]]), B=d, C=0 * d,
                     P=0 * d, Q=0 * d, M=0 * d)


def test_reweight_rejects_weak_adversary_penalty():
    with pytest.raises(ValueError, match="strongly concave"):
        ReweightBmo(seed=1, radii=(3.0, 3.0, 1.0), rho=4.0)


def test_registered_moduli_positive(quad11, reweight11):
    for p in (quad11, reweight11):
        reg = p.constants
        assert min(reg.l_f, reg.l_g, reg.L_f, reg.L_g) > 0


# ---------------------------------------------------------------------------
# Analytic saddle
# ---------------------------------------------------------------------------


def test_saddle_unforced_is_origin():
    p = zero_forcing_quadratic(d=3)
    data = p.make_dataset(5, 5, 5, seed=0)
    ys, zs = analytic_saddle(p, np.ones(3), data.training)
    assert np.allclose(ys, 0.0) and np.allclose(zs, 0.0)


def test_saddle_decoupled_scalar():
    # A=2, B=1, C=0, P=-2 so the y equation reads 2 y* = 2 x
    one = np.eye(1)
    p = QuadraticBmo(A=2 * one, B=one, C=0 * one, P=-2 * one, Q=0 * one,
                     M=0 * one, lam=0.0, sigma_upper=0.0, sigma_lower=0.0)
    data = p.make_dataset(4, 4, 4, seed=0)
    ys, zs = analytic_saddle(p, np.array([1.0]), data.training)
    assert np.allclose(ys, [1.0])
    assert np.allclose(zs, [0.0])


def test_saddle_matches_independent_schur_solve():
    # independent oracle: block elimination instead of the assembled solve
    p = QuadraticBmo.random(seed=11, d_x=3, d_y=3, d_z=3)
    data = p.make_dataset(10, 10, 10, seed=5)
    x = np.random.default_rng(2).standard_normal(3)
    ys, zs = analytic_saddle(p, x, data.training)

    zbar = data.training.mean(axis=0)
    r1 = -(p.P @ x + zbar[:3])
    r2 = p.Q @ x + zbar[3:]
    Binv = np.linalg.inv(p.B)
    y_expect = np.linalg.solve(p.A + p.C @ Binv @ p.C.T, r1 - p.C @ Binv @ r2)
    z_expect = Binv @ (r2 + p.C.T @ y_expect)
    assert np.allclose(ys, y_expect, atol=1e-12)
    assert np.allclose(zs, z_expect, atol=1e-12)


def test_saddle_first_order_residual(quad11, quad11_data):
    x = np.random.default_rng(4).standard_normal(quad11.d_x)
    ys, zs = analytic_saddle(quad11, x, quad11_data.training)
    gy = quad11.lower_grad_y(x, ys, zs, quad11_data.training)
    gz = quad11.lower_grad_z(x, ys, zs, quad11_data.training)
    scale = max(1.0, float(np.linalg.norm(np.concatenate([ys, zs]))))
    assert np.linalg.norm(np.concatenate([gy, gz])) / scale <= 1e-10


# ---------------------------------------------------------------------------
# Hypergradient
# ---------------------------------------------------------------------------


def test_upper_objective_identically_zero():
    p = zero_forcing_quadratic(d=2)
    data = p.make_dataset(5, 5, 5, seed=0)
    for x in (np.zeros(2), np.array([3.0, -1.0])):
        value, hyper = analytic_upper_objective(p, x, data)
        assert value == 0.0
        assert np.allclose(hyper, 0.0)


def test_upper_objective_pure_ridge_term():
    d = np.eye(2)
    p = QuadraticBmo(A=d, B=d, C=0 * d, P=0 * d, Q=0 * d, M=0 * d, lam=1.0,
                     sigma_upper=0.0, sigma_lower=0.0)
    data = p.make_dataset(4, 4, 4, seed=0)
    _, hyper = analytic_upper_objective(p, np.array([2.0, 0.0]), data)
    assert np.allclose(hyper, [2.0, 0.0])


def fd_hypergradient(p, x, data, h=1e-5):
    out = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        up, _ = analytic_upper_objective(p, x + e, data)
        dn, _ = analytic_upper_objective(p, x - e, data)
        out[j] = (up - dn) / (2.0 * h)
    return out


def test_hypergradient_matches_finite_differences(quad11, quad11_data):
    rng = np.random.default_rng(11)
    for _ in range(20):
        x = rng.standard_normal(quad11.d_x)
        x /= np.linalg.norm(x)
        _, hyper = analytic_upper_objective(quad11, x, quad11_data)
        fd = fd_hypergradient(quad11, x, quad11_data)
        assert np.linalg.norm(hyper - fd) / np.linalg.norm(fd) <= 1e-6


def test_implicit_grad_x_equals_hypergradient_at_saddle(quad11, quad11_data):
    x = np.random.default_rng(9).standard_normal(quad11.d_x)
    ys, zs = analytic_saddle(quad11, x, quad11_data.training)
    _, hyper = analytic_upper_objective(quad11, x, quad11_data)
    direct = quad11.implicit_grad_x(x, ys, zs, quad11_data.validation)
    assert np.allclose(direct, hyper, rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------------------
# Gradient audit
# ---------------------------------------------------------------------------


def test_audit_passes_quadratic(quad11):
    report = gradient_audit(quad11, trials=100, seed=11)
    assert report.passed, report.failures[:2]
    assert report.max_rel_err <= 1e-5


def test_audit_passes_reweight(reweight11):
    report = gradient_audit(reweight11, trials=100, seed=11)
    assert report.passed, report.failures[:2]
    assert report.max_rel_err <= 1e-5


class _CorruptedZGrad:
    """Delegating wrapper with a sign flip planted on lower_grad_z."""

    def __init__(self, inner):
        self._inner = inner

    def __getattr__(self, name):
        return getattr(self._inner, name)

    def lower_grad_z(self, x, y, z, zeta):
        return -self._inner.lower_grad_z(x, y, z, zeta)


def test_audit_names_planted_fault(quad11):
    report = gradient_audit(_CorruptedZGrad(quad11), trials=5, seed=11)
    assert not report.passed
    assert all(name == "lower_grad_z" for name, _, _ in report.failures)
    with pytest.raises(AssertionError, match="lower_grad_z"):
        report.raise_if_failed()


def test_audit_moduli_within_registered(quad11, reweight11):
    for p in (quad11, reweight11):
        report = gradient_audit(p, trials=1, seed=0, modulus_samples=10_000)
        assert report.modulus_exceedances == []
        assert report.empirical_l_f <= p.constants.l_f * 1.01
        assert report.empirical_L_g <= p.constants.L_g * 1.01


def test_audit_rejects_zero_trials(quad11):
    with pytest.raises(ValueError):
        gradient_audit(quad11, trials=0, seed=0)


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


def test_project_interior_point_unchanged(quad11):
    t = ParamTriple(np.ones(5), np.ones(5), np.ones(5))
    out = project(quad11, t)
    assert np.array_equal(out.x, t.x)


def test_project_radial_scaling(quad11):
    rx = quad11.radii[0]
    x = np.zeros(5)
    x[0] = 2 * rx
    out = project(quad11, ParamTriple(x, np.zeros(5), np.zeros(5)))
    assert np.isclose(np.linalg.norm(out.x), rx)
    assert out.x[0] > 0  # same direction


@settings(max_examples=30)
@given(st.lists(st.floats(-50, 50), min_size=5, max_size=5))
def test_project_idempotent(vals):
    p = QuadraticBmo.random(seed=1)
    t = ParamTriple(np.array(vals), np.array(vals), np.array(vals))
    once = project(p, t)
    twice = project(p, once)
    assert np.array_equal(once.x, twice.x)
    assert np.array_equal(once.y, twice.y)
    assert np.array_equal(once.z, twice.z)


def test_project_without_radii_is_identity():
    p = zero_forcing_quadratic()
    object.__setattr__ if False else setattr(p, "radii", None)
    t = ParamTriple(1e6 * np.ones(3), np.zeros(3), np.zeros(3))
    assert project(p, t) is t


# ---------------------------------------------------------------------------
# Population quantities
# ---------------------------------------------------------------------------


def test_population_risk_matches_monte_carlo(quad11):
    rng = np.random.default_rng(123)
    x = rng.standard_normal(quad11.d_x)
    y = rng.standard_normal(quad11.d_y)
    z = rng.standard_normal(quad11.d_z)
    exact = population_risk(quad11, x, y, z)
    n = 400_000
    est = quad11.upper_value(x, y, z, quad11.sample_upper(rng, n))
    assert abs(est - exact) <= 6 * np.sqrt(2.0 * quad11.d_y) / np.sqrt(n) * 10


def test_truncnorm_second_moment_matches_monte_carlo():
    p = QuadraticBmo.random(seed=11, noise_kind="truncnorm")
    rng = np.random.default_rng(5)
    xi = p.sample_upper(rng, 200_000)
    mc = float(np.mean(np.einsum("ij,ij->i", xi, xi)))
    exact = p._noise_second_moment(p.d_y, p.sigma_upper, p.noise_bound_upper)
    assert abs(mc - exact) / exact < 0.01
    assert np.all(np.linalg.norm(xi, axis=1) <= p.noise_bound_upper + 1e-12)


def test_population_minimizer_is_stationary(quad11):
    x_star, risk_star = population_minimizer(quad11)
    for delta in np.random.default_rng(3).standard_normal((10, quad11.d_x)):
        assert population_risk(quad11, x_star + 0.01 * delta) >= risk_star - 1e-12


def test_empirical_minimizer_gradient_norm(quad11, quad11_data):
    xhat = empirical_minimizer(quad11, quad11_data, tol=1e-8)
    _, hyper = analytic_upper_objective(quad11, xhat, quad11_data)
    assert np.linalg.norm(hyper) <= 1e-8


def test_saddle_jacobian_matches_finite_differences(quad11, quad11_data):
    jy, jz = saddle_jacobian(quad11)
    x = np.zeros(quad11.d_x)
    h = 1e-6
    for j in range(quad11.d_x):
        e = np.zeros(quad11.d_x)
        e[j] = h
        yp, zp = analytic_saddle(quad11, x + e, quad11_data.training)
        ym, zm = analytic_saddle(quad11, x - e, quad11_data.training)
        assert np.allclose((yp - ym) / (2 * h), jy[:, j], atol=1e-6)
        assert np.allclose((zp - zm) / (2 * h), jz[:, j], atol=1e-6)


# ---------------------------------------------------------------------------
# Reweight specifics
# ---------------------------------------------------------------------------


@settings(max_examples=30)
@given(st.lists(st.floats(-20, 20), min_size=5, max_size=5),
       st.integers(0, 2 ** 31 - 1))
def test_weights_strictly_inside_unit_interval(xvals, seed):
    # x confined to its projection ball, where the solver keeps it
    p = ReweightBmo(seed=3)
    x = np.array(xvals)
    n = np.linalg.norm(x)
    if n > p.radii[0]:
        x *= p.radii[0] / n
    samples = p.sample_lower(np.random.default_rng(seed), 16)
    w = p.weights(x, samples)
    assert np.all(w > 0.0) and np.all(w < 1.0)


def test_reweight_upper_gradient_couples_validation_samples(reweight11):
    # the x-gradient must move with the sample, else no meta-learning happens
    rng = np.random.default_rng(0)
    xi1 = reweight11.sample_upper(rng, 1)
    xi2 = reweight11.sample_upper(rng, 1)
    x = 0.1 * np.ones(reweight11.d_x)
    y = np.zeros(reweight11.d_y)
    z = np.zeros(reweight11.d_z)
    g1 = reweight11.upper_grad_x(x, y, z, xi1)
    g2 = reweight11.upper_grad_x(x, y, z, xi2)
    assert np.linalg.norm(g1) > 0
    assert not np.allclose(g1, g2)
