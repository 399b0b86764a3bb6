"""The three first-order solvers: SSGDA, TSGDA-1 and TSGDA-2.

All are deterministic given (problem, data, spec): every random quantity
(initialization, batch indices) is pre-drawn from the spec seed before the
loop starts, and both execution backends (pure Python and the compiled
kernels in ``bimax._fast``) consume those same arrays.

Update structure per outer iteration t:

  SSGDA / TSGDA-1  K alternating inner steps, each on one fresh lower batch:
                     y <- P[y - g1 * grad_y g(x, y, z; batch)]
                     z <- P[z + g2 * grad_z g(x, y_new, z; batch)]
                   then one x step on a fresh upper batch.
  TSGDA-2          K steps on y with z frozen at its start-of-iteration value,
                   then Q steps on z with y frozen at y after its loop,
                   then one x step.  Every inner step uses a fresh lower batch.

The z update ascends grad_z g: z is the maximizing variable of the lower
problem (flip the sign here to get the descent-on-both-variables variant).
Inner schedules advance on a global inner-step clock (t*K + k), which makes
SSGDA exactly the K=1 instance of TSGDA-1, trajectory-for-trajectory, for
every schedule kind.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field, replace


import numpy as np

from . import _fast
from .core import DatasetPair, ParamTriple, StepSchedule
from .problems.base import BmoProblem

__all__ = ["SolverSpec", "RunRecord", "DivergenceError",
           "run", "run_ssgda", "run_tsgda1", "run_tsgda2"]

ALGORITHMS = ("ssgda", "tsgda1", "tsgda2")
GUARD = 1e12


class DivergenceError(RuntimeError):
    """An iterate left the finite range; carries the outer iteration index."""

    def __init__(self, t: int, algorithm: str):
        super().__init__(f"{algorithm} diverged at outer iteration {t}")
        self.t = t
        self.algorithm = algorithm


@dataclass(frozen=True)
class SolverSpec:
    algorithm: str
    T: int
    eta: StepSchedule
    gamma1: StepSchedule
    gamma2: StepSchedule
    K: int = 1
    Q: int = 1
    hypergradient_mode: str = "direct_partial"
    sampling: str = "iid"
    batch_size_upper: int = 1
    batch_size_lower: int = 1
    seed: int = 0
    record_every: int = 1
    init: str = "zero"
    init_scale: float = 1.0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if self.K < 1 or self.Q < 1:
            raise ValueError("K and Q must be >= 1")
        if self.algorithm == "ssgda" and (self.K != 1 or self.Q != 1):
            raise ValueError("ssgda requires K = Q = 1")
        if self.algorithm == "tsgda1" and self.Q != 1:
            raise ValueError("tsgda1 requires Q = 1")
        if self.hypergradient_mode not in ("direct_partial", "exact_implicit"):
            raise ValueError(f"unknown hypergradient mode {self.hypergradient_mode!r}")
        if self.sampling not in ("iid", "full"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")
        if self.batch_size_upper < 1 or self.batch_size_lower < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.init not in ("zero", "gaussian"):
            raise ValueError(f"unknown init {self.init!r}")

    def with_seed(self, seed: int) -> "SolverSpec":
        return replace(self, seed=int(seed))

    def describe(self) -> dict:
        return {"algorithm": self.algorithm, "T": self.T, "K": self.K, "Q": self.Q,
                "eta": self.eta.describe(), "gamma1": self.gamma1.describe(),
                "gamma2": self.gamma2.describe(),
                "hypergradient_mode": self.hypergradient_mode,
                "sampling": self.sampling,
                "batch_size_upper": self.batch_size_upper,
                "batch_size_lower": self.batch_size_lower,
                "seed": self.seed, "record_every": self.record_every,
                "init": self.init, "init_scale": self.init_scale}


@dataclass
class RunRecord:
    """Trajectory of one solver run.

    ``losses[t]`` is the mean upper loss over the full validation set at the
    iterate produced by outer iteration t.  Snapshots are taken at t = 0 and
    then every ``record_every`` outer iterations.
    """

    final: ParamTriple
    snapshots: list = field(default_factory=list)
    losses: np.ndarray = None
    spec: SolverSpec = None
    wall_time: float = 0.0
    backend: str = "python"


# ---------------------------------------------------------------------------
# Shared preparation: everything random is drawn here, once
# ---------------------------------------------------------------------------


def _prepare(problem: BmoProblem, data: DatasetPair, spec: SolverSpec) -> dict:
    rng = np.random.default_rng(spec.seed)
    if spec.init == "gaussian":
        x0 = spec.init_scale * rng.standard_normal(problem.d_x)
        y0 = spec.init_scale * rng.standard_normal(problem.d_y)
        z0 = spec.init_scale * rng.standard_normal(problem.d_z)
    else:
        x0 = np.zeros(problem.d_x)
        y0 = np.zeros(problem.d_y)
        z0 = np.zeros(problem.d_z)

    T, K, Q = spec.T, spec.K, spec.Q
    n_inner = K + Q if spec.algorithm == "tsgda2" else K
    if spec.sampling == "full":
        lower_idx = np.broadcast_to(np.arange(data.m2, dtype=np.int64),
                                    (T, n_inner, data.m2)).copy()
        upper_idx = np.broadcast_to(np.arange(data.m1, dtype=np.int64),
                                    (T, data.m1)).copy()
    else:
        lower_idx = rng.integers(0, data.m2, size=(T, n_inner, spec.batch_size_lower))
        upper_idx = rng.integers(0, data.m1, size=(T, spec.batch_size_upper))

    eta = spec.eta.values(T)
    g1 = np.array([[spec.gamma1(t * K + k) for k in range(K)]
                   for t in range(T)], dtype=np.float64).reshape(T, K)
    n2 = Q if spec.algorithm == "tsgda2" else K
    g2 = np.array([[spec.gamma2(t * n2 + j) for j in range(n2)]
                   for t in range(T)], dtype=np.float64).reshape(T, n2)

    snap_ts = list(range(0, T + 1, spec.record_every))
    return {"x0": x0, "y0": y0, "z0": z0, "lower_idx": lower_idx,
            "upper_idx": upper_idx, "eta": eta, "g1": g1, "g2": g2,
            "snap_ts": snap_ts}


def _proj(u: np.ndarray, radius: float) -> np.ndarray:
    n = np.linalg.norm(u)
    # non-finite iterates pass through untouched for the divergence guard
    if np.isfinite(n) and n > radius * 1.000000000001:  # problems.base._PROJECT_SLACK
        return u * (radius / n)
    return u


def _check_finite(x, y, z, t, algorithm):
    for v in (x, y, z):
        if not np.all(np.isfinite(v)) or np.max(np.abs(v)) > GUARD:
            raise DivergenceError(t, algorithm)


# ---------------------------------------------------------------------------
# Pure-Python loops (generic over any BmoProblem)
# ---------------------------------------------------------------------------


def _hyper_fn(problem: BmoProblem, spec: SolverSpec):
    if spec.hypergradient_mode == "direct_partial":
        return problem.upper_grad_x
    if not hasattr(problem, "implicit_grad_x"):
        raise ValueError("exact_implicit mode needs a problem with an analytic "
                         "saddle (implicit_grad_x); got "
                         f"{type(problem).__name__}")
    return problem.implicit_grad_x


def _python_run(problem, data, spec, prep) -> tuple:
    x = prep["x0"].copy()
    y = prep["y0"].copy()
    z = prep["z0"].copy()
    radii = problem.radii
    hyper = _hyper_fn(problem, spec)
    training, validation = data.training, data.validation
    lower_idx, upper_idx = prep["lower_idx"], prep["upper_idx"]
    eta, g1, g2 = prep["eta"], prep["g1"], prep["g2"]
    T, K, Q = spec.T, spec.K, spec.Q
    two_loop = spec.algorithm == "tsgda2"

    losses = np.empty(T)
    snaps = {0: (x.copy(), y.copy(), z.copy())}
    for t in range(T):
        if two_loop:
            z_frozen = z.copy()
            for k in range(K):
                batch = training[lower_idx[t, k]]
                y = y - g1[t, k] * problem.lower_grad_y(x, y, z_frozen, batch)
                if radii:
                    y = _proj(y, radii[1])
            for q in range(Q):
                batch = training[lower_idx[t, K + q]]
                z = z + g2[t, q] * problem.lower_grad_z(x, y, z, batch)
                if radii:
                    z = _proj(z, radii[2])
        else:
            for k in range(K):
                batch = training[lower_idx[t, k]]
                y = y - g1[t, k] * problem.lower_grad_y(x, y, z, batch)
                if radii:
                    y = _proj(y, radii[1])
                z = z + g2[t, k] * problem.lower_grad_z(x, y, z, batch)
                if radii:
                    z = _proj(z, radii[2])
        xi = validation[upper_idx[t]]
        x = x - eta[t] * hyper(x, y, z, xi)
        if radii:
            x = _proj(x, radii[0])
        _check_finite(x, y, z, t, spec.algorithm)
        losses[t] = problem.upper_value(x, y, z, validation)
        if (t + 1) % spec.record_every == 0:
            snaps[t + 1] = (x.copy(), y.copy(), z.copy())
    return x, y, z, losses, snaps


# ---------------------------------------------------------------------------
# Compiled loops
# ---------------------------------------------------------------------------


def _fast_run(problem, data, spec, prep, oracle) -> tuple:
    radii = problem.radii or (-1.0, -1.0, -1.0)
    x = prep["x0"].copy()
    y = prep["y0"].copy()
    z = prep["z0"].copy()
    snap_ts = np.array(prep["snap_ts"], dtype=np.int64)
    n_snap = snap_ts.size
    snaps_x = np.zeros((n_snap, x.size))
    snaps_y = np.zeros((n_snap, y.size))
    snaps_z = np.zeros((n_snap, z.size))
    losses = np.empty(spec.T)

    runner = _fast.run_two_loop if spec.algorithm == "tsgda2" else _fast.run_alternating
    diverged_t = runner(
        oracle, x, y, z,
        np.ascontiguousarray(data.validation), np.ascontiguousarray(data.training),
        np.ascontiguousarray(prep["lower_idx"]), np.ascontiguousarray(prep["upper_idx"]),
        prep["eta"], np.ascontiguousarray(prep["g1"]), np.ascontiguousarray(prep["g2"]),
        float(radii[0]), float(radii[1]), float(radii[2]),
        snap_ts, snaps_x, snaps_y, snaps_z, losses, GUARD)
    if diverged_t >= 0:
        raise DivergenceError(int(diverged_t), spec.algorithm)
    snaps = {int(t): (snaps_x[i].copy(), snaps_y[i].copy(), snaps_z[i].copy())
             for i, t in enumerate(snap_ts)}
    return x, y, z, losses, snaps


# ---------------------------------------------------------------------------
# Entry points
# ---------------------------------------------------------------------------


def select_backend(problem: BmoProblem, spec: SolverSpec, backend: str = "auto") -> str:
    """Resolve the execution backend for this (problem, spec) pair.

    "auto" picks the compiled kernels when they are built and applicable;
    the BIMAX_BACKEND environment variable overrides the automatic choice.
    """
    fast_ok = (_fast.AVAILABLE and spec.hypergradient_mode == "direct_partial"
               and problem.fast_oracle() is not None)
    if backend == "auto":
        env = os.environ.get("BIMAX_BACKEND", "auto")
        if env == "python":
            return "python"
        return "fast" if fast_ok else "python"
    if backend == "fast" and not fast_ok:
        raise RuntimeError("compiled backend unavailable for this problem/spec")
    if backend not in ("fast", "python"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend


def run(problem: BmoProblem, data: DatasetPair, spec: SolverSpec,
        backend: str = "auto") -> RunRecord:
    """Execute one solver run; deterministic given (problem, data, spec)."""
    if spec.hypergradient_mode == "exact_implicit":
        _hyper_fn(problem, spec)  # fail fast with a clear message
    chosen = select_backend(problem, spec, backend)
    prep = _prepare(problem, data, spec)
    start = time.perf_counter()
    if chosen == "fast":
        x, y, z, losses, snaps = _fast_run(problem, data, spec, prep,
                                           problem.fast_oracle())
    else:
        x, y, z, losses, snaps = _python_run(problem, data, spec, prep)
    elapsed = time.perf_counter() - start
    snapshots = [(t, ParamTriple(*snaps[t])) for t in sorted(snaps)]
    return RunRecord(final=ParamTriple(x, y, z), snapshots=snapshots,
                     losses=losses, spec=spec, wall_time=elapsed, backend=chosen)


def _run_as(algorithm: str, problem, data, spec, backend="auto") -> RunRecord:
    if spec.algorithm != algorithm:
        raise ValueError(f"spec.algorithm is {spec.algorithm!r}, expected {algorithm!r}")
    return run(problem, data, spec, backend=backend)


def run_ssgda(problem, data, spec, backend="auto") -> RunRecord:
    return _run_as("ssgda", problem, data, spec, backend)


def run_tsgda1(problem, data, spec, backend="auto") -> RunRecord:
    return _run_as("tsgda1", problem, data, spec, backend)


def run_tsgda2(problem, data, spec, backend="auto") -> RunRecord:
    return _run_as("tsgda2", problem, data, spec, backend)
