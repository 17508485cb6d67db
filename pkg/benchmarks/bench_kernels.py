"""Time the numba and numpy kernel backends on the simulation-study workload.

Usage::

    python benchmarks/bench_kernels.py [--reps 200] [--repeat 3]

Both backends fit the same replicates of every preset with each structure
(exchangeable feasible GLS plus CR2/CR3 sandwiches), so the per-fit times
are directly comparable. JIT compilation is excluded by a warm-up pass.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from swcrt import _kernels
from swcrt.design import design_matrix
from swcrt.dgp import PRESET_NAMES, preset, simulate_trial
from swcrt.gls import estimate_gamma, fit_gls
from swcrt.variance import cluster_robust_vcov

STRUCTURES = ("IT", "ETI", "CTI")


def _workload(reps):
    out = []
    for name in PRESET_NAMES:
        sc = preset(name)
        data = [simulate_trial(sc, r) for r in range(reps)]
        for s in STRUCTURES:
            out.append((design_matrix(sc.design, s), data))
    return out


def _search(work, backend):
    for dm, data in work:
        for d in data:
            estimate_gamma(dm, d.means, d.within, backend=backend)


def _sandwich(work, backend):
    for dm, data in work:
        for d in data:
            fit = fit_gls(dm, d.means, 10 / 13)
            cluster_robust_vcov(fit, type="CR2", backend=backend)
            cluster_robust_vcov(fit, type="CR3", backend=backend)


def _time(fn, work, backend, repeat):
    fn(work[:1], backend)  # warm-up, includes JIT compilation
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn(work, backend)
        best = min(best, time.perf_counter() - t)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = ["numpy"] + (["numba"] if _kernels.HAS_NUMBA else [])
    work = _workload(args.reps)
    n_fits = sum(len(data) for _, data in work)
    print(f"{n_fits} fits per pass, best of {args.repeat}")
    print(f"{'kernel':<16}{'backend':<10}{'total s':>10}{'us/fit':>10}{'speedup':>10}")
    for label, fn in (("gamma search", _search), ("CR2+CR3 meat", _sandwich)):
        base = None
        for b in backends:
            t = _time(fn, work, b, args.repeat)
            base = base or t
            print(f"{label:<16}{b:<10}{t:>10.3f}{1e6 * t / n_fits:>10.1f}{base / t:>10.2f}")


if __name__ == "__main__":
    main()
