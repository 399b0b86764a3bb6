#!/usr/bin/env python3
"""Throughput comparison: compiled solver kernels vs the pure-Python loops.

Run:  python benchmarks/bench_backends.py [--repeat N]

Times full solver runs (the unit of work in stability estimation, which
reruns the solver m1+1 times per replicate) for both built-in problems and
all three algorithms.
"""

import argparse
import time


from bimax import QuadraticBmo, ReweightBmo
from bimax import _fast
from bimax.core import StepSchedule
from bimax.solvers import SolverSpec, run


def time_backend(problem, data, spec, backend, repeat):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        run(problem, data, spec, backend=backend)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    if not _fast.AVAILABLE:
        print("compiled kernels not built; nothing to compare")
        return

    configs = [
        ("ssgda", dict(T=400, K=1, Q=1)),
        ("tsgda1", dict(T=50, K=30, Q=1)),
        ("tsgda2", dict(T=50, K=30, Q=30)),
    ]
    problems = [("quadratic", QuadraticBmo.random(seed=11)),
                ("reweight", ReweightBmo(seed=11))]

    print(f"{'problem':<10} {'algorithm':<8} {'python':>10} {'fast':>10} {'speedup':>8}")
    for pname, problem in problems:
        data = problem.make_dataset(m1=200, m2=200, m_test=200, seed=0)
        for algo, dims in configs:
            spec = SolverSpec(algo, eta=StepSchedule.constant(0.01),
                              gamma1=StepSchedule.constant(0.05),
                              gamma2=StepSchedule.constant(0.05),
                              seed=1, record_every=10 ** 9, **dims)
            t_py = time_backend(problem, data, spec, "python", args.repeat)
            t_fast = time_backend(problem, data, spec, "fast", args.repeat)
            print(f"{pname:<10} {algo:<8} {t_py * 1e3:>8.2f}ms {t_fast * 1e3:>8.2f}ms "
                  f"{t_py / t_fast:>7.1f}x")


if __name__ == "__main__":
    main()
