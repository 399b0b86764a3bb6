"""Shared foundations: parameter triples, datasets, step schedules, seeding.

Everything here is immutable after construction and safe to share across
threads; solvers and estimators never mutate these objects in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "ParamTriple",
    "DatasetPair",
    "StepSchedule",
    "ConstantsRegistry",
    "make_sibling",
    "schedule_eval",
    "triple_distance",
    "draw_dataset",
    "stream_seed",
    "dataset_seed",
    "run_seed",
    "sibling_seed",
]


def _frozen(a) -> np.ndarray:
    """Own a float64 copy and mark it read-only."""
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ParamTriple:
    """The iterate (x, y, z): upper variable plus the two lower (min/max) variables."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        for name in ("x", "y", "z"):
            v = _frozen(getattr(self, name))
            if v.ndim != 1:
                raise ValueError(f"{name} must be a 1-D vector, got shape {v.shape}")
            object.__setattr__(self, name, v)

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.x.size, self.y.size, self.z.size)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.x, self.y, self.z])

    @classmethod
    def zeros(cls, d_x: int, d_y: int, d_z: int) -> "ParamTriple":
        return cls(np.zeros(d_x), np.zeros(d_y), np.zeros(d_z))


def triple_distance(a: ParamTriple, b: ParamTriple) -> float:
    """Euclidean norm of the stacked difference (x-x', y-y', z-z')."""
    if a.dims != b.dims:
        raise ValueError(f"dimension mismatch: {a.dims} vs {b.dims}")
    dx = a.x - b.x
    dy = a.y - b.y
    dz = a.z - b.z
    return float(np.sqrt(dx @ dx + dy @ dy + dz @ dz))


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

Sampler = Callable[[np.random.Generator, int], np.ndarray]


@dataclass(frozen=True)
class DatasetPair:
    """Validation set (m1), training set (m2) and a held-out test set.

    ``validation`` and ``test`` are drawn from the same distribution;
    ``upper_sampler`` redraws from it, which is what sibling construction
    (single-sample replacement) needs.  Rows are samples.
    """

    validation: np.ndarray
    training: np.ndarray
    test: np.ndarray
    origin_seed: int
    upper_sampler: Sampler = field(repr=False, compare=False)
    lower_sampler: Sampler = field(repr=False, compare=False)

    def __post_init__(self):
        for name in ("validation", "training", "test"):
            v = getattr(self, name)
            if not isinstance(v, np.ndarray) or v.ndim != 2:
                raise ValueError(f"{name} must be a 2-D sample array")
            if v.shape[0] < 1:
                raise ValueError(f"{name} must hold at least one sample")
            v.setflags(write=False)

    @property
    def m1(self) -> int:
        return self.validation.shape[0]

    @property
    def m2(self) -> int:
        return self.training.shape[0]

    @property
    def m_test(self) -> int:
        return self.test.shape[0]

    def sibling(self, i: int, replacement_seed: int) -> "DatasetPair":
        return make_sibling(self, i, replacement_seed)


def draw_dataset(upper_sampler: Sampler, lower_sampler: Sampler,
                 m1: int, m2: int, m_test: int, seed: int) -> DatasetPair:
    """Draw a fresh DatasetPair, bitwise-reproducible from ``seed``.

    Three independent child streams are derived from ``seed`` via
    ``numpy.random.SeedSequence.spawn``: child 0 draws the validation set,
    child 1 the training set, child 2 the test set.
    """
    if min(m1, m2, m_test) < 1:
        raise ValueError("m1, m2 and m_test must all be >= 1")
    kids = np.random.SeedSequence(seed).spawn(3)
    validation = upper_sampler(np.random.default_rng(kids[0]), m1)
    training = lower_sampler(np.random.default_rng(kids[1]), m2)
    test = upper_sampler(np.random.default_rng(kids[2]), m_test)
    return DatasetPair(validation=validation, training=training, test=test,
                       origin_seed=int(seed), upper_sampler=upper_sampler,
                       lower_sampler=lower_sampler)


def make_sibling(data: DatasetPair, i: int, replacement_seed: int) -> DatasetPair:
    """Replace validation sample ``i`` with an independent redraw.

    The replacement is ``data.upper_sampler(default_rng(replacement_seed), 1)``,
    so the result is deterministic given (data, i, replacement_seed).  Training
    and test arrays are shared with the input, not copied.
    """
    if not 0 <= i < data.m1:
        raise IndexError(f"sibling index {i} out of range [0, {data.m1})")
    replacement = data.upper_sampler(np.random.default_rng(replacement_seed), 1)
    validation = data.validation.copy()
    validation[i] = replacement[0]
    return DatasetPair(validation=validation, training=data.training,
                       test=data.test, origin_seed=data.origin_seed,
                       upper_sampler=data.upper_sampler,
                       lower_sampler=data.lower_sampler)


# ---------------------------------------------------------------------------
# Step-size schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepSchedule:
    """Step size as a function of the iteration index.

    kinds:
      constant     step(t) = c
      inverse_t    step(t) = min(1, c / ((t + 1) * L))
      exponential  step(t) = init * rate**t        (0 < rate <= 1)

    ``inverse_t`` uses t+1 in the denominator so t=0 is well defined while
    keeping step(t) <= c/(t*L) for every t >= 1.
    """

    kind: str
    a: float
    b: float = 0.0

    def __post_init__(self):
        if self.kind == "constant":
            if self.a <= 0:
                raise ValueError("constant schedule requires c > 0")
        elif self.kind == "inverse_t":
            if self.a <= 0 or self.b <= 0:
                raise ValueError("inverse_t schedule requires c > 0 and L > 0")
        elif self.kind == "exponential":
            if self.a <= 0 or not 0 < self.b <= 1:
                raise ValueError("exponential schedule requires init > 0 and 0 < rate <= 1")
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def constant(cls, c: float) -> "StepSchedule":
        return cls("constant", float(c))

    @classmethod
    def inverse_t(cls, c: float, L: float) -> "StepSchedule":
        return cls("inverse_t", float(c), float(L))

    @classmethod
    def exponential(cls, init: float, rate: float) -> "StepSchedule":
        return cls("exponential", float(init), float(rate))

    def __call__(self, t: int) -> float:
        if t < 0:
            raise ValueError("iteration index must be >= 0")
        if self.kind == "constant":
            return self.a
        if self.kind == "inverse_t":
            return min(1.0, self.a / ((t + 1) * self.b))
        return self.a * self.b ** t

    def values(self, n: int, offset: int = 0) -> np.ndarray:
        """Evaluate at offset, offset+1, ..., offset+n-1."""
        return np.array([self(offset + t) for t in range(n)], dtype=np.float64)

    def describe(self) -> str:
        if self.kind == "constant":
            return f"constant({self.a:g})"
        if self.kind == "inverse_t":
            return f"inverse_t(c={self.a:g},L={self.b:g})"
        return f"exponential(init={self.a:g},rate={self.b:g})"


def schedule_eval(s: StepSchedule, t: int) -> float:
    """Module-level alias for ``s(t)``."""
    return s(t)


# ---------------------------------------------------------------------------
# Problem constants (Lipschitz / smoothness moduli)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantsRegistry:
    """Lipschitz and smoothness moduli of the two losses, plus optionals.

    ``hoelder`` is an (alpha, tau) pair with alpha in [0, 1]; ``c_hoelder``
    is the companion constant of the Hoelder-case gap converter, which has
    no closed form here and must be supplied by the caller.  ``V`` bounds
    the expected distance from the start point to the empirical minimizer.
    """

    l_f: float
    l_g: float
    L_f: float
    L_g: float
    hoelder: Optional[tuple[float, float]] = None
    c_hoelder: Optional[float] = None
    V: Optional[float] = None

    def __post_init__(self):
        for name in ("l_f", "l_g", "L_f", "L_g"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.hoelder is not None:
            alpha, tau = self.hoelder
            if not 0 <= alpha <= 1 or tau <= 0:
                raise ValueError("hoelder requires alpha in [0,1] and tau > 0")

    @property
    def l(self) -> float:
        return max(self.l_f, self.l_g)

    @property
    def L(self) -> float:
        return max(self.L_f, self.L_g)


# ---------------------------------------------------------------------------
# Seed derivation
# ---------------------------------------------------------------------------
#
# One root seed fans out into independent streams through SeedSequence spawn
# keys.  Stream ids: 0 datasets, 1 solver runs, 2 sibling replacements,
# 3 index subsampling, 4 sweep cells.  Stability experiments rely on this:
# a coupled rerun reuses the same run seed, so the sample-index sequence is
# identical and the runs differ only through the replaced data point.

STREAM_DATASET = 0
STREAM_RUN = 1
STREAM_SIBLING = 2
STREAM_SUBSAMPLE = 3
STREAM_CELL = 4


def stream_seed(root_seed: int, *key: int) -> int:
    """Derive a 32-bit child seed for the stream addressed by ``key``."""
    ss = np.random.SeedSequence(entropy=int(root_seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1)[0])


def dataset_seed(root_seed: int, replicate: int) -> int:
    return stream_seed(root_seed, STREAM_DATASET, replicate)


def run_seed(root_seed: int, replicate: int, variant: int = 0) -> int:
    return stream_seed(root_seed, STREAM_RUN, replicate, variant)


def sibling_seed(root_seed: int, replicate: int, index: int) -> int:
    return stream_seed(root_seed, STREAM_SIBLING, replicate, index)
