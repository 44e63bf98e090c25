"""Compare the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--n 8192] [--repeat 5]

Also checks that both backends return identical results on every input.
"""

import argparse
import timeit

import numpy as np

from pseudoscene import _fallback

try:
    from pseudoscene import _kernels
except ImportError:  # extension not built
    _kernels = None


def cases(n, rng):
    p = rng.uniform(-1, 1, size=(n, 3))
    order = np.lexsort((p[:, 2], p[:, 1], p[:, 0]))
    ps = np.ascontiguousarray(p[order])
    centers = np.ascontiguousarray(ps[: n // 2])
    x = rng.normal(size=(n * 4, 64))
    seg = rng.integers(0, n, size=n * 4)
    return {
        "fps": lambda mod: mod.fps(ps, n // 2, 0),
        "knn(k=16)": lambda mod: mod.knn(centers, ps, 16),
        "segment_max": lambda mod: mod.segment_max(x, seg, n),
        "segment_sum": lambda mod: mod.segment_sum(x, seg, n),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(u, v) for u, v in zip(a, b))
    return np.array_equal(a, b)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=8192)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"N={args.n}, best of {args.repeat}")
    print(f"{'kernel':14s} {'fallback s':>11s} {'compiled s':>11s} {'speedup':>8s}  identical")
    for name, fn in cases(args.n, rng).items():
        t_py = min(timeit.repeat(lambda: fn(_fallback), number=1, repeat=args.repeat))
        if _kernels is None:
            print(f"{name:14s} {t_py:11.4f} {'n/a':>11s}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_kernels), number=1, repeat=args.repeat))
        same = _same(fn(_fallback), fn(_kernels))
        print(f"{name:14s} {t_py:11.4f} {t_c:11.4f} {t_py / t_c:7.1f}x  {same}")


if __name__ == "__main__":
    main()
