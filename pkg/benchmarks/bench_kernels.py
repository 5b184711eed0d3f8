"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is run on identical inputs under both backends; the outputs are
checked for agreement before timings are reported.
"""

import argparse
import timeit

import numpy as np

from mkvdp import _backend


def cases():
    rng = np.random.default_rng(0)
    reps = np.arange(64, dtype=np.uint64)
    parts = np.arange(256, dtype=np.uint64)
    x, y = np.sort(rng.normal(size=4000)), np.sort(rng.normal(size=3000))
    wx, wy = np.full(4000, 1 / 4000), np.full(3000, 1 / 3000)
    cost = rng.random((2000, 243))
    nxt = rng.integers(0, 2000, size=(2000, 243))
    v = rng.random(2000)
    return {
        "normals 64x256x1": lambda k: k.normals(7, 3, reps, parts, 1),
        "brownian_increments ratio 16": lambda k: k.brownian_increments(7, 0, 16, 0.01, reps, parts, 1),
        "w1_sorted_1d 4000 vs 3000": lambda k: k.w1_sorted_1d(x, wx, y, wy),
        "minplus_backup 2000x243": lambda k: k.minplus_backup(cost, nxt, v),
        "bellman_dd 2000x243": lambda k: k.bellman_dd(cost, nxt, v, np.zeros_like(v), 0.9),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(p, q) for p, q in zip(a, b))
    return np.allclose(a, b, rtol=1e-12, atol=1e-14)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    names = _backend.available()
    if "cython" not in names:
        print("compiled extension not built; timing the numpy fallback only")
    backends = {n: _backend.get(n) for n in names}
    print(f"{'kernel':32s}" + "".join(f"{n:>12s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in cases().items():
        outs = {n: fn(k) for n, k in backends.items()}
        if len(outs) > 1 and not _same(outs["python"], outs["cython"]):
            raise SystemExit(f"backends disagree on {label}")
        times = {}
        for n, k in backends.items():
            number = 3
            times[n] = min(timeit.repeat(lambda: fn(k), number=number, repeat=args.repeat)) / number
        row = f"{label:32s}" + "".join(f"{times[n] * 1e3:10.2f}ms" for n in names)
        if len(names) > 1:
            row += f"{times['python'] / times['cython']:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
