"""Benchmark the hot kernels on both execution paths.

Runs the numba-jitted kernels in this process, then re-executes itself
with VISPROBE_DISABLE_NUMBA=1 to time the pure-numpy fallback, and prints
a side-by-side table. Warm-up calls are excluded so JIT compilation does
not pollute the numbers.

Usage: python benchmarks/bench_kernels.py [--size 256] [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def make_inputs(size):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (size, size, 3)).astype(np.float64)
    mask = np.zeros((size, size), dtype=bool)
    q = size // 4
    mask[q : 3 * q, q : 3 * q] = rng.random((2 * q, 2 * q)) < 0.5
    return img, mask


def bench(size, repeat):
    from visprobe import _kernels

    img, mask = make_inputs(size)
    results = {}

    def timeit(name, fn):
        fn()  # warm-up (includes JIT compile on the numba path)
        times = []
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        results[name] = min(times)

    timeit("blur k=25", lambda: _kernels.blur_float(img, 25))

    def fill():
        vals = img.copy()
        filled = ~mask
        _kernels.onion_fill(vals, filled)

    timeit("onion fill", fill)
    return {"numba": _kernels.USING_NUMBA, "results": results}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--size", type=int, default=256)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--emit-json", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    mine = bench(args.size, args.repeat)
    if args.emit_json:
        print(json.dumps(mine))
        return

    env = dict(os.environ)
    env["VISPROBE_DISABLE_NUMBA"] = "" if mine["numba"] else "1"
    if mine["numba"]:
        env["VISPROBE_DISABLE_NUMBA"] = "1"
    other = json.loads(
        subprocess.run(
            [sys.executable, __file__, "--size", str(args.size),
             "--repeat", str(args.repeat), "--emit-json"],
            env=env, capture_output=True, text=True, check=True,
        ).stdout
    )
    jit, plain = (mine, other) if mine["numba"] else (other, mine)
    print(f"kernel benchmarks, {args.size}x{args.size}, best of {args.repeat}")
    print(f"{'kernel':<14} {'numba':>10} {'numpy':>10} {'speedup':>8}")
    for name in jit["results"]:
        a = jit["results"][name]
        b = plain["results"][name]
        print(f"{name:<14} {a * 1e3:>8.2f}ms {b * 1e3:>8.2f}ms {b / a:>7.1f}x")


if __name__ == "__main__":
    main()
