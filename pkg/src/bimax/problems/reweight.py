"""Adversarial data-reweighting problem (desk scale).

A meta-learner x drives per-sample weights w(x; sample) = sigmoid(x . [a, 1])
for a ridge regression y fit on the training set, while an adversary z shifts
every training feature vector subject to a quadratic penalty.  The upper level
scores the fitted model on validation samples and calibrates the weight map on
them, which is the channel through which validation data reaches x:

    f(x,y,z; xi)   = 1/2 (a'y - b)^2 + nu/2 (w(x; xi) - w_target)^2
    g(x,y,z; zeta) = w(x; zeta) * 1/2 ((a+z)'y - b)^2 + mu/2 ||y||^2 - rho/2 ||z||^2

g is strongly convex in y (mu > 0) and strongly concave in z on the projected
domain as long as rho exceeds sup w * ||y y'|| = R_y^2, which is checked at
construction.
"""

from __future__ import annotations

import numpy as np

from ..core import ConstantsRegistry
from .base import BmoProblem

__all__ = ["ReweightBmo"]


def _sigmoid(u):
    return 1.0 / (1.0 + np.exp(-u))


class ReweightBmo(BmoProblem):

    upper_nonnegative = True

    def __init__(self, seed: int, p: int = 4, theta_scale: float = 2.0,
                 sigma_label: float = 0.5, mu: float = 0.1, rho: float = None,
                 nu: float = 1.0, w_target: float = 0.85,
                 radii: tuple[float, float, float] = (3.0, 3.0, 1.0)):
        self.p = int(p)
        self.d_x = self.p + 1
        self.d_y = self.p
        self.d_z = self.p
        self.upper_sample_dim = self.p + 1
        self.lower_sample_dim = self.p + 1
        self.radii = tuple(float(r) for r in radii)
        self.seed = int(seed)
        self.mu = float(mu)
        self.nu = float(nu)
        self.w_target = float(w_target)
        self.sigma_label = float(sigma_label)
        self.theta_scale = float(theta_scale)

        rng = np.random.default_rng(seed)
        theta = rng.standard_normal(self.p)
        self.theta = theta_scale * theta / np.linalg.norm(theta)

        ry = self.radii[1]
        self.rho = float(rho) if rho is not None else 2.0 * ry ** 2
        if self.rho <= ry ** 2:
            raise ValueError(
                f"rho={self.rho:g} must exceed R_y^2={ry ** 2:g} so the adversary "
                "objective stays strongly concave on the projected domain")
        if self.mu <= 0:
            raise ValueError("mu must be > 0")
        if not 0.0 < self.w_target < 1.0:
            raise ValueError("w_target must lie in (0, 1)")

        self.constants = self._build_constants()

    # -- sampling --------------------------------------------------------------

    def _sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        a = rng.standard_normal((n, self.p))
        b = a @ self.theta + self.sigma_label * rng.standard_normal(n)
        return np.hstack([a, b[:, None]])

    # validation/test and training share one sample model here
    sample_upper = _sample
    sample_lower = _sample

    # -- weights ----------------------------------------------------------------

    def weights(self, x: np.ndarray, samples: np.ndarray) -> np.ndarray:
        """w(x; sample) for each row; strictly inside (0, 1)."""
        a = samples[:, :self.p]
        return _sigmoid(a @ x[:self.p] + x[self.p])

    def _phi(self, samples):
        a = samples[:, :self.p]
        return np.hstack([a, np.ones((samples.shape[0], 1))])

    # -- upper loss ---------------------------------------------------------------

    def _upper_parts(self, x, y, samples):
        a = samples[:, :self.p]
        b = samples[:, self.p]
        r = a @ y - b
        w = self.weights(x, samples)
        return a, r, w

    def upper_value(self, x, y, z, xi):
        _, r, w = self._upper_parts(x, y, xi)
        return float(np.mean(0.5 * r ** 2 + 0.5 * self.nu * (w - self.w_target) ** 2))

    def upper_grad_x(self, x, y, z, xi):
        _, _, w = self._upper_parts(x, y, xi)
        coef = self.nu * (w - self.w_target) * w * (1.0 - w)
        return coef @ self._phi(xi) / xi.shape[0]

    def upper_grad_y(self, x, y, z, xi):
        a, r, _ = self._upper_parts(x, y, xi)
        return r @ a / xi.shape[0]

    def upper_grad_z(self, x, y, z, xi):
        return np.zeros(self.d_z)

    # -- lower loss -----------------------------------------------------------------

    def _lower_parts(self, x, y, z, samples):
        a = samples[:, :self.p]
        b = samples[:, self.p]
        s = a @ y + z @ y - b
        w = self.weights(x, samples)
        return a, s, w

    def lower_value(self, x, y, z, zeta):
        _, s, w = self._lower_parts(x, y, z, zeta)
        return float(np.mean(w * 0.5 * s ** 2)
                     + 0.5 * self.mu * (y @ y) - 0.5 * self.rho * (z @ z))

    def lower_grad_x(self, x, y, z, zeta):
        _, s, w = self._lower_parts(x, y, z, zeta)
        coef = w * (1.0 - w) * 0.5 * s ** 2
        return coef @ self._phi(zeta) / zeta.shape[0]

    def lower_grad_y(self, x, y, z, zeta):
        a, s, w = self._lower_parts(x, y, z, zeta)
        ws = w * s
        return (ws @ a + ws.sum() * z) / zeta.shape[0] + self.mu * y

    def lower_grad_z(self, x, y, z, zeta):
        _, s, w = self._lower_parts(x, y, z, zeta)
        return float(np.mean(w * s)) * y - self.rho * z

    # -- constants ---------------------------------------------------------------

    def _build_constants(self) -> ConstantsRegistry:
        rx, ry, rz = self.radii
        ba = np.sqrt(self.p) + 6.0  # high-probability feature-norm radius
        bb = ba * self.theta_scale + 6.0 * self.sigma_label
        bphi = np.sqrt(ba ** 2 + 1.0)
        rr = ba * ry + bb              # sup |a'y - b|
        rs = (ba + rz) * ry + bb       # sup |(a+z)'y - b|

        l_f = float(np.sqrt((0.25 * self.nu * bphi) ** 2 + (rr * ba) ** 2))
        l_g = float(np.sqrt((0.125 * rs ** 2 * bphi) ** 2
                            + (rs * (ba + rz) + self.mu * ry) ** 2
                            + (rs * ry + self.rho * rz) ** 2))
        # block-wise curvature bounds, summed (coarse but valid)
        L_f = float(max(self.nu * (5.0 / 16.0) * bphi ** 2, ba ** 2))
        g_xx = 0.125 * rs ** 2 * bphi ** 2
        g_yy = (ba + rz) ** 2 + self.mu
        g_zz = self.rho
        g_xy = 0.25 * rs * (ba + rz) * bphi
        g_xz = 0.25 * rs * ry * bphi
        g_yz = (ba + rz) * ry + rs
        L_g = float(g_xx + g_yy + g_zz + 2.0 * (g_xy + g_xz + g_yz))
        return ConstantsRegistry(l_f=l_f, l_g=l_g, L_f=L_f, L_g=L_g)

    # -- fast path ------------------------------------------------------------------

    def fast_oracle(self):
        from .. import _fast
        if not _fast.AVAILABLE:
            return None
        return _fast.reweight_oracle(self.p, self.mu, self.rho, self.nu, self.w_target)

    def describe(self) -> dict:
        d = super().describe()
        d.update(p=self.p, seed=self.seed, mu=self.mu, rho=self.rho, nu=self.nu,
                 w_target=self.w_target, sigma_label=self.sigma_label,
                 theta_scale=self.theta_scale)
        return d
