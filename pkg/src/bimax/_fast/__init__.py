"""Compiled solver kernels, selected at import time.

``AVAILABLE`` is True when the Cython extension built; solver dispatch falls
back to the pure-Python loops otherwise.  Both backends consume identical
pre-drawn index and step-size arrays, so they differ only in floating-point
accumulation order (parity is checked in tests, benchmarked in benchmarks/).
"""

try:
    from ._loops import (  # noqa: F401
        QuadraticOracle,
        ReweightOracle,
        run_alternating,
        run_two_loop,
    )

    AVAILABLE = True
except ImportError:  # pragma: no cover - build-environment dependent
    AVAILABLE = False
    QuadraticOracle = ReweightOracle = None
    run_alternating = run_two_loop = None


def quadratic_oracle(A, B, C, P, Q, M, lam):
    if not AVAILABLE:
        return None
    import numpy as np

    c = np.ascontiguousarray
    return QuadraticOracle(c(A), c(B), c(C), c(P), c(Q), c(M), float(lam))


def reweight_oracle(p, mu, rho, nu, w_target):
    if not AVAILABLE:
        return None
    return ReweightOracle(int(p), float(mu), float(rho), float(nu), float(w_target))
