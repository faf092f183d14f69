"""Compare the compiled and pure-Python kernel backends.

    python benchmarks/bench_kernels.py [--n 20000] [--repeat 5]

Prints best-of-N wall time per kernel and backend, plus the speedup.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from simulstream import kernels


def latency_workload(n: int, rng: np.random.Generator):
    src = rng.integers(5, 200, size=n).astype(np.int64)
    tgt = rng.integers(5, 200, size=n).astype(np.int64)
    gs = [np.sort(rng.integers(1, s + 1, size=t)).astype(np.int64) for s, t in zip(src, tgt)]
    return gs, src, tgt


def ngram_workload(n: int, rng: np.random.Generator):
    return [(rng.integers(0, 50, size=rng.integers(5, 60)).astype(np.int64),
             rng.integers(0, 50, size=rng.integers(5, 60)).astype(np.int64)) for _ in range(n)]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=20000, help="items per workload")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    gs, src, tgt = latency_workload(args.n, rng)
    pairs = ngram_workload(args.n, rng)
    jobs = {
        "latency_batch": lambda impl: impl.latency_batch(gs, src, tgt),
        "ngram_stats": lambda impl: [impl.ngram_stats(h, r, 4) for h, r in pairs],
    }
    if "cython" not in kernels.BACKENDS:
        print("compiled backend not built; timing the Python fallback only")

    print(f"{'kernel':<15}{'backend':<10}{'best (s)':>10}{'speedup':>10}")
    for name, job in jobs.items():
        times = {}
        for backend, impl in sorted(kernels.BACKENDS.items(), key=lambda kv: kv[0] != "python"):
            times[backend] = min(timeit.repeat(lambda: job(impl), number=1, repeat=args.repeat))
            speedup = times["python"] / times[backend]
            print(f"{name:<15}{backend:<10}{times[backend]:>10.4f}{speedup:>9.1f}x")


if __name__ == "__main__":
    main()
