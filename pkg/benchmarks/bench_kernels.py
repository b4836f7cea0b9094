"""Compare the compiled kernels against the pure-Python fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on fixed random inputs with both backends; the table
reports best-of-N wall time and the speedup. Results also sanity-check
that the two backends agree on every output.
"""

from __future__ import annotations

import argparse
import random
import time

import numpy as np

from lifesim.kernels import BACKEND
from lifesim.kernels import pyfallback

if BACKEND != "native":
    raise SystemExit(
        "compiled extension not importable; build it first (pip install -e .)"
    )

from lifesim.kernels import _native as native  # noqa: E402  (guarded import)


def best_of(repeat: int, fn, *args) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_lcs(repeat: int) -> tuple[str, float, float]:
    rng = random.Random(7)
    a = [rng.randrange(50) for _ in range(600)]
    b = [rng.randrange(50) for _ in range(600)]
    assert native.lcs_length(a, b) == pyfallback.lcs_length(a, b)
    return (
        "lcs_length (600x600 ids)",
        best_of(repeat, native.lcs_length, a, b),
        best_of(repeat, pyfallback.lcs_length, a, b),
    )


def bench_scores(repeat: int) -> tuple[str, float, float]:
    rng = np.random.default_rng(7)
    q = rng.normal(size=(1024, 64))
    k = rng.normal(size=(16, 64))
    scale = 1.0 / 8.0
    assert np.allclose(
        native.scaled_scores(q, k, scale), pyfallback.scaled_scores(q, k, scale)
    )
    return (
        "scaled_scores (1024x64 @ 16)",
        best_of(repeat, native.scaled_scores, q, k, scale),
        best_of(repeat, pyfallback.scaled_scores, q, k, scale),
    )


def bench_fuse(repeat: int) -> tuple[str, float, float]:
    rng = np.random.default_rng(7)
    o_t = rng.normal(size=(4096, 64))
    o_e = rng.normal(size=(4096, 64))
    o_c = rng.normal(size=(4096, 64))
    mask = rng.integers(0, 2, size=4096).astype(np.float64)
    assert np.allclose(
        native.fuse_rows(o_t, o_e, o_c, mask, 1.0, 1.0),
        pyfallback.fuse_rows(o_t, o_e, o_c, mask, 1.0, 1.0),
    )
    return (
        "fuse_rows (4096x64)",
        best_of(repeat, native.fuse_rows, o_t, o_e, o_c, mask, 1.0, 1.0),
        best_of(repeat, pyfallback.fuse_rows, o_t, o_e, o_c, mask, 1.0, 1.0),
    )


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5, help="runs per measurement")
    args = parser.parse_args()

    rows = [bench_lcs(args.repeat), bench_scores(args.repeat), bench_fuse(args.repeat)]
    width = max(len(name) for name, _, _ in rows)
    print(f"{'kernel':<{width}}  {'native':>10}  {'fallback':>10}  {'speedup':>8}")
    for name, fast, slow in rows:
        print(
            f"{name:<{width}}  {fast * 1000:>8.2f}ms  {slow * 1000:>8.2f}ms  {slow / fast:>7.1f}x"
        )


if __name__ == "__main__":
    main()
