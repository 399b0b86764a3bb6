"""Quadratic bilevel minimax instance with closed-form everything.

The lower loss is strongly convex in y and strongly concave in z, so the
saddle solves one linear system; the upper loss is convex in x.  That makes
the saddle map, its Jacobian, the exact hypergradient, the empirical and
population minimizers, and the population risk all available in closed form,
which is what the solver and estimator tests check against.

Per-sample losses (xi in R^{d_y}, zeta = (zeta1, zeta2) in R^{d_y + d_z}):

    f(x,y,z; xi)   = 1/2 ||y - (M x + xi)||^2 + 1/2 ||z||^2 + lam/2 ||x||^2
    g(x,y,z; zeta) = 1/2 y'Ay - 1/2 z'Bz + y'Cz + y'(Px + zeta1) + z'(Qx + zeta2)
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.stats import chi2

from ..core import ConstantsRegistry, DatasetPair
from .base import BmoProblem

__all__ = [
    "QuadraticBmo",
    "analytic_saddle",
    "saddle_jacobian",
    "analytic_upper_objective",
    "empirical_minimizer",
    "population_minimizer",
    "population_risk",
]


def _spectral(mat: np.ndarray) -> float:
    if mat.size == 0:
        return 0.0
    return float(np.linalg.norm(mat, 2))


def _sample_ball_normal(rng, n, dim, sigma, bound):
    """Standard normal rows conditioned on ||row|| <= bound, scaled by sigma."""
    out = rng.standard_normal((n, dim))
    while True:
        bad = np.flatnonzero(np.linalg.norm(out, axis=1) * sigma > bound)
        if bad.size == 0:
            return sigma * out
        out[bad] = rng.standard_normal((bad.size, dim))


def _sample_sphere(rng, n, dim, sigma):
    """Uniform rows on the sphere of radius sigma * sqrt(dim).

    Matches the normal kind's second moment (sigma^2 * dim) with constant
    norm, so sample-mean loss estimates carry no ||sample||^2 fluctuation.
    """
    out = rng.standard_normal((n, dim))
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    return sigma * np.sqrt(dim) * out / norms


class QuadraticBmo(BmoProblem):
    """See module docstring.  A and B must be symmetric positive definite."""

    upper_nonnegative = True

    def __init__(self, A, B, C, P, Q, M, lam: float = 0.5,
                 sigma_upper: float = 1.0, sigma_lower: float = 1.0,
                 noise_kind: str = "normal",
                 noise_bound_upper: Optional[float] = None,
                 noise_bound_lower: Optional[float] = None,
                 radii: tuple[float, float, float] = (10.0, 10.0, 10.0)):
        self.A = np.atleast_2d(np.asarray(A, dtype=np.float64))
        self.B = np.atleast_2d(np.asarray(B, dtype=np.float64))
        self.C = np.atleast_2d(np.asarray(C, dtype=np.float64))
        self.P = np.atleast_2d(np.asarray(P, dtype=np.float64))
        self.Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        self.M = np.atleast_2d(np.asarray(M, dtype=np.float64))
        self.lam = float(lam)
        self.d_y, self.d_x = self.M.shape
        self.d_z = self.B.shape[0]
        self.upper_sample_dim = self.d_y
        self.lower_sample_dim = self.d_y + self.d_z
        self.radii = tuple(float(r) for r in radii)

        if self.A.shape != (self.d_y, self.d_y) or self.B.shape != (self.d_z, self.d_z):
            raise ValueError("A must be d_y x d_y and B must be d_z x d_z")
        if self.C.shape != (self.d_y, self.d_z):
            raise ValueError("C must be d_y x d_z")
        if self.P.shape != (self.d_y, self.d_x) or self.Q.shape != (self.d_z, self.d_x):
            raise ValueError("P must be d_y x d_x and Q must be d_z x d_x")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        for name, mat in (("A", self.A), ("B", self.B)):
            if not np.allclose(mat, mat.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            mu = float(np.linalg.eigvalsh(mat)[0])
            if mu <= 0:
                raise ValueError(f"{name} must be positive definite (min eig {mu:.3g})")
            setattr(self, "mu_y" if name == "A" else "mu_z", mu)

        if noise_kind not in ("normal", "truncnorm", "sphere"):
            raise ValueError(f"unknown noise kind {noise_kind!r}")
        self.noise_kind = noise_kind
        self.sigma_upper = float(sigma_upper)
        self.sigma_lower = float(sigma_lower)
        if noise_kind == "truncnorm":
            self.noise_bound_upper = float(
                noise_bound_upper if noise_bound_upper is not None
                else sigma_upper * (np.sqrt(self.d_y) + 2.0))
            self.noise_bound_lower = float(
                noise_bound_lower if noise_bound_lower is not None
                else sigma_lower * (np.sqrt(self.lower_sample_dim) + 2.0))
        else:
            self.noise_bound_upper = None
            self.noise_bound_lower = None

        # lower-level saddle system  [A, C; -C', B] (y, z) = rhs(x)
        self._S = np.block([[self.A, self.C], [-self.C.T, self.B]])
        self._forcing = np.vstack([-self.P, self.Q])  # d rhs / d x
        self._J = np.linalg.solve(self._S, self._forcing)

        self.constants = self._build_constants()

    # -- construction helpers -----------------------------------------------

    @classmethod
    def random(cls, seed: int, d_x: int = 5, d_y: int = 5, d_z: int = 5,
               coupling: float = 0.3, forcing: float = 1.0, target: float = 1.0,
               lam: float = 0.5, **kwargs) -> "QuadraticBmo":
        """Seeded instance with unit-normalized couplings.

        A and B have eigenvalues in [1, 2], and ||C|| = coupling < 1, so the
        lower-level best-response map is a contraction and alternating inner
        loops converge for any x.
        """
        rng = np.random.default_rng(seed)

        def spd(d):
            G = rng.standard_normal((d, d))
            S = G @ G.T
            return np.eye(d) + S / _spectral(S)

        def scaled(rows, cols, scale):
            G = rng.standard_normal((rows, cols))
            return scale * G / _spectral(G) if scale > 0 else np.zeros((rows, cols))

        A = spd(d_y)
        B = spd(d_z)
        C = scaled(d_y, d_z, coupling)
        P = scaled(d_y, d_x, forcing)
        Q = scaled(d_z, d_x, forcing)
        M = scaled(d_y, d_x, target)
        return cls(A, B, C, P, Q, M, lam=lam, **kwargs)

    def _noise_second_moment(self, dim: int, sigma: float, bound) -> float:
        """Exact E||xi||^2 for the declared noise distribution."""
        if sigma == 0.0:
            return 0.0
        if self.noise_kind in ("normal", "sphere"):
            return sigma ** 2 * dim
        c2 = (bound / sigma) ** 2
        return sigma ** 2 * dim * chi2.cdf(c2, dim + 2) / chi2.cdf(c2, dim)

    def _effective_sample_bound(self, dim: int, sigma: float, bound) -> float:
        # for unbounded noise the registered Lipschitz moduli use a
        # high-probability norm radius; recorded via describe()
        if self.noise_kind == "truncnorm":
            return bound
        if self.noise_kind == "sphere":
            return sigma * np.sqrt(dim)
        return sigma * (np.sqrt(dim) + 6.0)

    def _build_constants(self) -> ConstantsRegistry:
        rx, ry, rz = self.radii
        b_xi = self._effective_sample_bound(self.d_y, self.sigma_upper,
                                            self.noise_bound_upper)
        b_ze = self._effective_sample_bound(self.lower_sample_dim, self.sigma_lower,
                                            self.noise_bound_lower)
        nM, nA, nB, nC = map(_spectral, (self.M, self.A, self.B, self.C))
        nP, nQ = _spectral(self.P), _spectral(self.Q)

        s = ry + nM * rx + b_xi  # sup ||y - Mx - xi||
        l_f = float(np.sqrt((nM * s + self.lam * rx) ** 2 + s ** 2 + rz ** 2))
        sx = nP * ry + nQ * rz
        sy = nA * ry + nC * rz + nP * rx + b_ze
        sz = nB * rz + nC * ry + nQ * rx + b_ze
        l_g = float(np.sqrt(sx ** 2 + sy ** 2 + sz ** 2))

        dx, dy, dz = self.d_x, self.d_y, self.d_z
        H_f = np.zeros((dx + dy + dz, dx + dy + dz))
        H_f[:dx, :dx] = self.M.T @ self.M + self.lam * np.eye(dx)
        H_f[:dx, dx:dx + dy] = -self.M.T
        H_f[dx:dx + dy, :dx] = -self.M
        H_f[dx:dx + dy, dx:dx + dy] = np.eye(dy)
        H_f[dx + dy:, dx + dy:] = np.eye(dz)
        L_f = float(np.max(np.abs(np.linalg.eigvalsh(H_f))))

        H_g = np.zeros_like(H_f)
        H_g[:dx, dx:dx + dy] = self.P.T
        H_g[:dx, dx + dy:] = self.Q.T
        H_g[dx:dx + dy, :dx] = self.P
        H_g[dx:dx + dy, dx:dx + dy] = self.A
        H_g[dx:dx + dy, dx + dy:] = self.C
        H_g[dx + dy:, :dx] = self.Q
        H_g[dx + dy:, dx:dx + dy] = self.C.T
        H_g[dx + dy:, dx + dy:] = -self.B
        L_g = float(np.max(np.abs(np.linalg.eigvalsh(H_g))))

        return ConstantsRegistry(l_f=l_f, l_g=l_g, L_f=L_f, L_g=L_g)

    # -- sampling -------------------------------------------------------------

    def sample_upper(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.noise_kind == "truncnorm":
            return _sample_ball_normal(rng, n, self.d_y, self.sigma_upper,
                                       self.noise_bound_upper)
        if self.noise_kind == "sphere":
            return _sample_sphere(rng, n, self.d_y, self.sigma_upper)
        return self.sigma_upper * rng.standard_normal((n, self.d_y))

    def sample_lower(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.noise_kind == "truncnorm":
            return _sample_ball_normal(rng, n, self.lower_sample_dim,
                                       self.sigma_lower, self.noise_bound_lower)
        if self.noise_kind == "sphere":
            return _sample_sphere(rng, n, self.lower_sample_dim, self.sigma_lower)
        return self.sigma_lower * rng.standard_normal((n, self.lower_sample_dim))

    # -- losses and gradients (batch means) -----------------------------------

    def _residual_mean(self, x, y, z, xi):
        return y - self.M @ x - xi.mean(axis=0)

    def upper_value(self, x, y, z, xi):
        r = (y - self.M @ x)[None, :] - xi
        return float(0.5 * np.mean(np.einsum("ij,ij->i", r, r))
                     + 0.5 * z @ z + 0.5 * self.lam * (x @ x))

    def upper_grad_x(self, x, y, z, xi):
        return -self.M.T @ self._residual_mean(x, y, z, xi) + self.lam * x

    def upper_grad_y(self, x, y, z, xi):
        return self._residual_mean(x, y, z, xi)

    def upper_grad_z(self, x, y, z, xi):
        return z.copy()

    def _zeta_means(self, zeta):
        zbar = zeta.mean(axis=0)
        return zbar[:self.d_y], zbar[self.d_y:]

    def lower_value(self, x, y, z, zeta):
        z1, z2 = self._zeta_means(zeta)
        return float(0.5 * y @ (self.A @ y) - 0.5 * z @ (self.B @ z)
                     + y @ (self.C @ z)
                     + y @ (self.P @ x + z1) + z @ (self.Q @ x + z2))

    def lower_grad_x(self, x, y, z, zeta):
        return self.P.T @ y + self.Q.T @ z

    def lower_grad_y(self, x, y, z, zeta):
        z1, _ = self._zeta_means(zeta)
        return self.A @ y + self.C @ z + self.P @ x + z1

    def lower_grad_z(self, x, y, z, zeta):
        _, z2 = self._zeta_means(zeta)
        return -self.B @ z + self.C.T @ y + self.Q @ x + z2

    def implicit_grad_x(self, x, y, z, xi):
        """Hypergradient through the saddle map, evaluated at the given iterate.

        Uses the constant saddle Jacobian; coincides with the exact implicit
        derivative of the mean upper loss whenever (y, z) sits at the saddle.
        """
        jy, jz = self._J[:self.d_y], self._J[self.d_y:]
        return (self.upper_grad_x(x, y, z, xi)
                + jy.T @ self.upper_grad_y(x, y, z, xi)
                + jz.T @ self.upper_grad_z(x, y, z, xi))

    # -- fast path -------------------------------------------------------------

    def fast_oracle(self):
        from .. import _fast
        if not _fast.AVAILABLE:
            return None
        return _fast.quadratic_oracle(self.A, self.B, self.C, self.P, self.Q,
                                      self.M, self.lam)

    def describe(self) -> dict:
        d = super().describe()
        d.update(noise_kind=self.noise_kind, sigma_upper=self.sigma_upper,
                 sigma_lower=self.sigma_lower, lam=self.lam,
                 noise_bound_upper=self.noise_bound_upper,
                 noise_bound_lower=self.noise_bound_lower)
        return d


# ---------------------------------------------------------------------------
# Closed-form oracles
# ---------------------------------------------------------------------------


def analytic_saddle(p: QuadraticBmo, x: np.ndarray,
                    training: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact stationary point of the full-batch lower loss at this x."""
    z1, z2 = p._zeta_means(training)
    rhs = np.concatenate([-(p.P @ x + z1), p.Q @ x + z2])
    sol = np.linalg.solve(p._S, rhs)
    return sol[:p.d_y], sol[p.d_y:]


def saddle_jacobian(p: QuadraticBmo) -> tuple[np.ndarray, np.ndarray]:
    """d(y*, z*)/dx, constant because the saddle map is affine in x."""
    return p._J[:p.d_y], p._J[p.d_y:]


def analytic_upper_objective(p: QuadraticBmo, x: np.ndarray, data: DatasetPair,
                             subset: str = "validation") -> tuple[float, np.ndarray]:
    """Mean upper loss over ``subset`` at the exact saddle, and its hypergradient.

    The hypergradient is grad_x f + Jy' grad_y f + Jz' grad_z f with the
    Jacobians from the saddle linear system (implicit differentiation).
    """
    ys, zs = analytic_saddle(p, x, data.training)
    xi = getattr(data, subset)
    value = p.upper_value(x, ys, zs, xi)
    jy, jz = saddle_jacobian(p)
    hyper = (p.upper_grad_x(x, ys, zs, xi)
             + jy.T @ p.upper_grad_y(x, ys, zs, xi)
             + jz.T @ p.upper_grad_z(x, ys, zs, xi))
    return value, hyper


def _saddle_affine(p: QuadraticBmo, training: np.ndarray):
    """(Jy, Jz, sy0, sz0) with y*(x) = Jy x + sy0, z*(x) = Jz x + sz0."""
    z1, z2 = p._zeta_means(training)
    s0 = np.linalg.solve(p._S, np.concatenate([-z1, z2]))
    return p._J[:p.d_y], p._J[p.d_y:], s0[:p.d_y], s0[p.d_y:]


def _risk_quadratic(p: QuadraticBmo, jy, jz, sy0, sz0, xi_mean, xi_sq_mean):
    """Hessian and linear term of x -> mean_xi f(x, y*(x), z*(x); xi)."""
    U = jy - p.M
    H = U.T @ U + jz.T @ jz + p.lam * np.eye(p.d_x)
    b = U.T @ (sy0 - xi_mean) + jz.T @ sz0
    const = 0.5 * float(sy0 @ sy0 - 2.0 * sy0 @ xi_mean + xi_sq_mean + sz0 @ sz0)
    return H, b, const


def empirical_minimizer(p: QuadraticBmo, data: DatasetPair,
                        subset: str = "validation", tol: float = 1e-8,
                        max_iter: int = 100_000) -> np.ndarray:
    """Minimize the empirical saddle-restricted upper risk over x.

    Exact-hypergradient steepest descent with exact line search (the
    objective is a strongly convex quadratic for lam > 0); stops at
    ||hypergradient|| <= tol.
    """
    xi = getattr(data, subset)
    jy, jz, sy0, sz0 = _saddle_affine(p, data.training)
    H, b, _ = _risk_quadratic(p, jy, jz, sy0, sz0, xi.mean(axis=0),
                              float(np.mean(np.einsum("ij,ij->i", xi, xi))))
    x = np.zeros(p.d_x)
    for _ in range(max_iter):
        h = H @ x + b
        hn = float(np.linalg.norm(h))
        if hn <= tol:
            return x
        x = x - (hn ** 2 / float(h @ (H @ h))) * h
    raise RuntimeError(f"empirical minimizer did not reach ||grad|| <= {tol}")


def population_risk(p: QuadraticBmo, x, y=None, z=None) -> float:
    """Exact population upper risk.

    With (y, z) given, evaluates E_xi f(x, y, z; xi) at that triple; otherwise
    (y, z) is the population saddle at x.  Uses the exact noise second moment.
    """
    if y is None or z is None:
        yz = p._J @ x
        y, z = yz[:p.d_y], yz[p.d_y:]
    m2 = p._noise_second_moment(p.d_y, p.sigma_upper, p.noise_bound_upper)
    u = y - p.M @ x
    return float(0.5 * (u @ u + m2) + 0.5 * z @ z + 0.5 * p.lam * (x @ x))


def population_minimizer(p: QuadraticBmo) -> tuple[np.ndarray, float]:
    """The population-risk minimizer x* and its risk R(x*)."""
    jy, jz = saddle_jacobian(p)
    m2 = p._noise_second_moment(p.d_y, p.sigma_upper, p.noise_bound_upper)
    H, b, _ = _risk_quadratic(p, jy, jz, np.zeros(p.d_y), np.zeros(p.d_z),
                              np.zeros(p.d_y), m2)
    x_star = np.linalg.solve(H, -b) if p.lam > 0 else np.zeros(p.d_x)
    return x_star, population_risk(p, x_star)
