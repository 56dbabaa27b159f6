"""Time the numba kernels against their numpy fallbacks, plus an end-to-end ingest.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--ingest 1000000]

Each kernel is checked for identical output before timing. The first numba
call (compilation) is excluded from the timings.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from afbench import kernels


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng: np.random.Generator):
    universe = 2_000_000
    pos = [np.unique(rng.integers(0, universe, 400_000)) for _ in range(3)]
    neg = [np.unique(rng.integers(0, universe, 50_000)) for _ in range(4)]
    keys = np.sort(rng.integers(0, 300_000, 1_000_000))
    weights = rng.random(1_000_000)
    hay = np.unique(rng.integers(0, universe, 500_000))
    needles = rng.integers(0, universe, 1_000_000)
    return {
        "fused_candidates": lambda nb: kernels.fused_candidates(pos, neg, use_numba=nb),
        "dedup_max": lambda nb: kernels.dedup_max(keys, weights, use_numba=nb),
        "contains_sorted": lambda nb: kernels.contains_sorted(hay, needles, use_numba=nb),
    }


def same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def bench_ingest(n: int) -> float:
    from afbench.kb import IngestConfig, ingest_kb
    from afbench.skills import default_tables
    from afbench.synthetic import iter_dump_lines

    skills, _ = default_tables()
    t0 = time.perf_counter()
    ingest_kb(iter_dump_lines(n, skills.relations), IngestConfig(skills.relations))
    return time.perf_counter() - t0


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--ingest", type=int, default=1_000_000, help="lines for the ingest timing (0 skips it)")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"default backend: {kernels.backend()}")
    print(f"{'kernel':<18}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, fn in cases(np.random.default_rng(args.seed)).items():
        ref, fast = fn(False), fn(True)  # second call also triggers compilation
        if not same(ref, fast):
            raise SystemExit(f"{name}: backends disagree")
        t_np = best_of(lambda: fn(False), args.repeat)
        t_nb = best_of(lambda: fn(True), args.repeat)
        print(f"{name:<18}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x")
    if args.ingest:
        print(f"ingest of {args.ingest:,} synthetic lines: {bench_ingest(args.ingest):.1f}s")


if __name__ == "__main__":
    main()
