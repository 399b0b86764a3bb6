# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled solver inner loops.

One loop body per loop structure (alternating, two separate inner loops),
generic over a small gradient-oracle vtable so both built-in problems share
the same kernels.  Semantics mirror the pure-Python loops in bimax.solvers:
same update order, same projection, same divergence guard, consuming the same
pre-drawn index and step-size arrays.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, isfinite, sqrt

ctypedef cnp.int64_t i64


cdef class Oracle:
    """Per-problem gradient evaluations on raw buffers (batch means)."""

    cdef void lower_gy(self, double[::1] x, double[::1] y, double[::1] z,
                       const double[:, ::1] data, const i64[::1] idx,
                       double[::1] out) noexcept:
        pass

    cdef void lower_gz(self, double[::1] x, double[::1] y, double[::1] z,
                       const double[:, ::1] data, const i64[::1] idx,
                       double[::1] out) noexcept:
        pass

    cdef void upper_gx(self, double[::1] x, double[::1] y, double[::1] z,
                       const double[:, ::1] data, const i64[::1] idx,
                       double[::1] out) noexcept:
        pass

    cdef double upper_value_full(self, double[::1] x, double[::1] y, double[::1] z,
                                 const double[:, ::1] data) noexcept:
        return 0.0


cdef class QuadraticOracle(Oracle):
    cdef double[:, ::1] A, B, C, P, Q, M
    cdef double lam
    cdef int dx, dy, dz
    cdef double[::1] buf_y

    def __init__(self, A, B, C, P, Q, M, double lam):
        self.A = A
        self.B = B
        self.C = C
        self.P = P
        self.Q = Q
        self.M = M
        self.lam = lam
        self.dy, self.dx = M.shape[0], M.shape[1]
        self.dz = B.shape[0]
        self.buf_y = np.zeros(self.dy)

    cdef void lower_gy(self, double[::1] x, double[::1] y, double[::1] z,
                       const double[:, ::1] data, const i64[::1] idx,
                       double[::1] out) noexcept:
        cdef int i, j, b
        cdef int n = idx.shape[0]
        cdef double acc
        for i in range(self.dy):
            acc = 0.0
            for j in range(self.dy):
                acc += self.A[i, j] * y[j]
            for j in range(self.dz):
                acc += self.C[i, j] * z[j]
            for j in range(self.dx):
                acc += self.P[i, j] * x[j]
            for b in range(n):
                acc += data[idx[b], i] / n
            out[i] = acc

    cdef void lower_gz(self, double[::1] x, double[::1] y, double[::1] z,
                       const double[:, ::1] data, const i64[::1] idx,
                       double[::1] out) noexcept:
        cdef int i, j, b
        cdef int n = idx.shape[0]
        cdef double acc
        for i in range(self.dz):
            acc = 0.0
            for j in range(self.dz):
                acc -= self.B[i, j] * z[j]
            for j in range(self.dy):
                acc += self.C[j, i] * y[j]
            for j in range(self.dx):
                acc += self.Q[i, j] * x[j]
            for b in range(n):
                acc += data[idx[b], self.dy + i] / n
            out[i] = acc

    cdef void upper_gx(self, double[::1] x, double[::1] y, double[::1] z,
                       const double[:, ::1] data, const i64[::1] idx,
                       double[::1] out) noexcept:
        cdef int i, j, b
        cdef int n = idx.shape[0]
        cdef double acc
        # mean residual y - Mx - xi_bar
        for j in range(self.dy):
            acc = y[j]
            for i in range(self.dx):
                acc -= self.M[j, i] * x[i]
            for b in range(n):
                acc -= data[idx[b], j] / n
            self.buf_y[j] = acc
        for i in range(self.dx):
            acc = self.lam * x[i]
            for j in range(self.dy):
                acc -= self.M[j, i] * self.buf_y[j]
            out[i] = acc

    cdef double upper_value_full(self, double[::1] x, double[::1] y, double[::1] z,
                                 const double[:, ::1] data) noexcept:
        cdef int i, j
        cdef int m = data.shape[0]
        cdef double acc = 0.0, reg = 0.0, d
        for j in range(self.dy):
            d = y[j]
            for i in range(self.dx):
                d -= self.M[j, i] * x[i]
            self.buf_y[j] = d
        for i in range(m):
            for j in range(self.dy):
                d = self.buf_y[j] - data[i, j]
                acc += d * d
        for j in range(self.dz):
            reg += z[j] * z[j]
        for i in range(self.dx):
            reg += self.lam * x[i] * x[i]
        return 0.5 * acc / m + 0.5 * reg


cdef class ReweightOracle(Oracle):
    cdef int p
    cdef double mu, rho, nu, c0

    def __init__(self, int p, double mu, double rho, double nu, double c0):
        self.p = p
        self.mu = mu
        self.rho = rho
        self.nu = nu
        self.c0 = c0

    cdef inline double _weight(self, double[::1] x, const double[:, ::1] data,
                               Py_ssize_t row) noexcept:
        cdef int j
        cdef double u = x[self.p]
        for j in range(self.p):
            u += x[j] * data[row, j]
        return 1.0 / (1.0 + exp(-u))

    cdef void lower_gy(self, double[::1] x, double[::1] y, double[::1] z,
                       const double[:, ::1] data, const i64[::1] idx,
                       double[::1] out) noexcept:
        cdef int j, b
        cdef int n = idx.shape[0]
        cdef Py_ssize_t r
        cdef double s, w
        for j in range(self.p):
            out[j] = self.mu * y[j]
        for b in range(n):
            r = idx[b]
            s = -data[r, self.p]
            for j in range(self.p):
                s += (data[r, j] + z[j]) * y[j]
            w = self._weight(x, data, r) * s / n
            for j in range(self.p):
                out[j] += w * (data[r, j] + z[j])

    cdef void lower_gz(self, double[::1] x, double[::1] y, double[::1] z,
                       const double[:, ::1] data, const i64[::1] idx,
                       double[::1] out) noexcept:
        cdef int j, b
        cdef int n = idx.shape[0]
        cdef Py_ssize_t r
        cdef double s, ws = 0.0
        for b in range(n):
            r = idx[b]
            s = -data[r, self.p]
            for j in range(self.p):
                s += (data[r, j] + z[j]) * y[j]
            ws += self._weight(x, data, r) * s / n
        for j in range(self.p):
            out[j] = ws * y[j] - self.rho * z[j]

    cdef void upper_gx(self, double[::1] x, double[::1] y, double[::1] z,
                       const double[:, ::1] data, const i64[::1] idx,
                       double[::1] out) noexcept:
        cdef int j, b
        cdef int n = idx.shape[0]
        cdef Py_ssize_t r
        cdef double w, coef
        for j in range(self.p + 1):
            out[j] = 0.0
        for b in range(n):
            r = idx[b]
            w = self._weight(x, data, r)
            coef = self.nu * (w - self.c0) * w * (1.0 - w) / n
            for j in range(self.p):
                out[j] += coef * data[r, j]
            out[self.p] += coef

    cdef double upper_value_full(self, double[::1] x, double[::1] y, double[::1] z,
                                 const double[:, ::1] data) noexcept:
        cdef int j
        cdef Py_ssize_t i
        cdef Py_ssize_t m = data.shape[0]
        cdef double acc = 0.0, rr, w
        for i in range(m):
            rr = -data[i, self.p]
            for j in range(self.p):
                rr += data[i, j] * y[j]
            w = self._weight(x, data, i)
            acc += 0.5 * rr * rr + 0.5 * self.nu * (w - self.c0) * (w - self.c0)
        return acc / m


# ---------------------------------------------------------------------------
# Loop bodies
# ---------------------------------------------------------------------------


cdef inline void _project(double[::1] u, double radius) noexcept:
    # slack matches the Python paths so re-projection is a bitwise no-op
    cdef int j
    cdef double n = 0.0, scale
    if radius < 0:
        return
    for j in range(u.shape[0]):
        n += u[j] * u[j]
    n = sqrt(n)
    if n > radius * 1.000000000001:
        scale = radius / n
        for j in range(u.shape[0]):
            u[j] *= scale


cdef inline bint _bad(double[::1] u, double guard) noexcept:
    cdef int j
    for j in range(u.shape[0]):
        if not isfinite(u[j]) or fabs(u[j]) > guard:
            return True
    return False


cdef inline void _axpy(double[::1] u, double alpha, double[::1] g) noexcept:
    cdef int j
    for j in range(u.shape[0]):
        u[j] += alpha * g[j]


cdef void _snapshot(Py_ssize_t pos, double[::1] x, double[::1] y,
                    double[::1] z, double[:, ::1] sx, double[:, ::1] sy,
                    double[:, ::1] sz) noexcept:
    cdef int j
    for j in range(x.shape[0]):
        sx[pos, j] = x[j]
    for j in range(y.shape[0]):
        sy[pos, j] = y[j]
    for j in range(z.shape[0]):
        sz[pos, j] = z[j]


def run_alternating(Oracle oracle, double[::1] x, double[::1] y, double[::1] z,
                    const double[:, ::1] validation, const double[:, ::1] training,
                    lower_idx, upper_idx,
                    double[::1] eta, const double[:, ::1] g1, const double[:, ::1] g2,
                    double rx, double ry, double rz,
                    snap_ts_arr, double[:, ::1] sx, double[:, ::1] sy,
                    double[:, ::1] sz, double[::1] losses, double guard):
    """SSGDA / TSGDA-1 loop.  Returns the diverging outer index, or -1."""
    cdef const i64[:, :, ::1] lidx = lower_idx
    cdef const i64[:, ::1] uidx = upper_idx
    cdef i64[::1] snap_ts = snap_ts_arr
    cdef int T = eta.shape[0]
    cdef int K = g1.shape[1]
    cdef int t, k
    cdef Py_ssize_t snap_pos = 0
    cdef double[::1] grad_y = np.zeros(y.shape[0])
    cdef double[::1] grad_z = np.zeros(z.shape[0])
    cdef double[::1] grad_x = np.zeros(x.shape[0])

    if snap_pos < snap_ts.shape[0] and snap_ts[snap_pos] == 0:
        _snapshot(snap_pos, x, y, z, sx, sy, sz)
        snap_pos += 1

    for t in range(T):
        for k in range(K):
            oracle.lower_gy(x, y, z, training, lidx[t, k], grad_y)
            _axpy(y, -g1[t, k], grad_y)
            _project(y, ry)
            oracle.lower_gz(x, y, z, training, lidx[t, k], grad_z)
            _axpy(z, g2[t, k], grad_z)
            _project(z, rz)
        oracle.upper_gx(x, y, z, validation, uidx[t], grad_x)
        _axpy(x, -eta[t], grad_x)
        _project(x, rx)
        if _bad(x, guard) or _bad(y, guard) or _bad(z, guard):
            return t
        losses[t] = oracle.upper_value_full(x, y, z, validation)
        if snap_pos < snap_ts.shape[0] and snap_ts[snap_pos] == t + 1:
            _snapshot(snap_pos, x, y, z, sx, sy, sz)
            snap_pos += 1
    return -1


def run_two_loop(Oracle oracle, double[::1] x, double[::1] y, double[::1] z,
                 const double[:, ::1] validation, const double[:, ::1] training,
                 lower_idx, upper_idx,
                 double[::1] eta, const double[:, ::1] g1, const double[:, ::1] g2,
                 double rx, double ry, double rz,
                 snap_ts_arr, double[:, ::1] sx, double[:, ::1] sy,
                 double[:, ::1] sz, double[::1] losses, double guard):
    """TSGDA-2 loop: K steps on y (z frozen), then Q steps on z (y frozen)."""
    cdef const i64[:, :, ::1] lidx = lower_idx
    cdef const i64[:, ::1] uidx = upper_idx
    cdef i64[::1] snap_ts = snap_ts_arr
    cdef int T = eta.shape[0]
    cdef int K = g1.shape[1]
    cdef int Q = g2.shape[1]
    cdef int t, k, q, j
    cdef Py_ssize_t snap_pos = 0
    cdef double[::1] grad_y = np.zeros(y.shape[0])
    cdef double[::1] grad_z = np.zeros(z.shape[0])
    cdef double[::1] grad_x = np.zeros(x.shape[0])
    cdef double[::1] z_frozen = np.zeros(z.shape[0])

    if snap_pos < snap_ts.shape[0] and snap_ts[snap_pos] == 0:
        _snapshot(snap_pos, x, y, z, sx, sy, sz)
        snap_pos += 1

    for t in range(T):
        for j in range(z.shape[0]):
            z_frozen[j] = z[j]
        for k in range(K):
            oracle.lower_gy(x, y, z_frozen, training, lidx[t, k], grad_y)
            _axpy(y, -g1[t, k], grad_y)
            _project(y, ry)
        for q in range(Q):
            oracle.lower_gz(x, y, z, training, lidx[t, K + q], grad_z)
            _axpy(z, g2[t, q], grad_z)
            _project(z, rz)
        oracle.upper_gx(x, y, z, validation, uidx[t], grad_x)
        _axpy(x, -eta[t], grad_x)
        _project(x, rx)
        if _bad(x, guard) or _bad(y, guard) or _bad(z, guard):
            return t
        losses[t] = oracle.upper_value_full(x, y, z, validation)
        if snap_pos < snap_ts.shape[0] and snap_ts[snap_pos] == t + 1:
            _snapshot(snap_pos, x, y, z, sx, sy, sz)
            snap_pos += 1
    return -1
