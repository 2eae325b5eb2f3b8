"""Benchmark the compiled round kernel against the numpy fallback.

Runs the four kernel operations on seeded workloads of a few sizes, checks
that both implementations agree bit for bit, and prints a timing table.

    python -m beepnet.bench [--rounds 4096] [--repeat 5]
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from .graphs import generate_random_graph
from .kernel import fallback

try:
    from .kernel import _core as compiled
except ImportError:
    compiled = None

U64 = np.uint64


def _workload(n: int, delta: int, rounds: int, seed: int):
    graph = generate_random_graph(n, delta, seed)
    rng = np.random.default_rng(seed)
    w = (n + 63) // 64
    beeps = rng.integers(0, 1 << 63, size=(rounds, w), dtype=np.uint64)
    if n % 64:
        beeps &= U64((1 << (n % 64)) - 1)
    patterns = rng.integers(0, 1 << 63, size=(n, max(1, rounds // 64)), dtype=np.uint64)
    indptr, indices = graph.csr
    return graph.adj_words, beeps, indptr, indices, patterns


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def run_bench(rounds: int, repeat: int, out=sys.stdout) -> bool:
    if compiled is None:
        print("compiled kernel not built; nothing to compare against", file=out)
        return False
    agree = True
    rows = []
    for n, delta in ((32, 4), (64, 8), (256, 8)):
        adj, beeps, indptr, indices, patterns = _workload(n, delta, rounds, seed=9)
        cases = [
            ("noise_rounds", lambda k: k.noise_rounds(adj, beeps)),
            ("or_neighbor_patterns", lambda k: k.or_neighbor_patterns(indptr, indices, patterns)),
            ("expand_patterns", lambda k: k.expand_patterns(patterns, rounds)),
            ("collapse_rounds", lambda k: k.collapse_rounds(beeps, n)),
        ]
        for name, op in cases:
            want = op(fallback)
            got = op(compiled)
            if not np.array_equal(want, got):
                print(f"MISMATCH: {name} n={n}", file=out)
                agree = False
                continue
            t_fast = _time(lambda: op(compiled), repeat)
            t_slow = _time(lambda: op(fallback), repeat)
            rows.append((name, n, t_slow, t_fast))
    print(f"{'operation':<22} {'n':>4} {'numpy_ms':>9} {'compiled_ms':>11} {'speedup':>8}", file=out)
    for name, n, t_slow, t_fast in rows:
        ratio = t_slow / t_fast if t_fast > 0 else float("inf")
        print(
            f"{name:<22} {n:>4} {t_slow * 1e3:>9.3f} {t_fast * 1e3:>11.3f} {ratio:>7.1f}x",
            file=out,
        )
    return agree


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rounds", type=int, default=4096)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    return 0 if run_bench(args.rounds, args.repeat) else 1


if __name__ == "__main__":
    sys.exit(main())
