"""Benchmark numba kernels against their numpy twins.

Runs each hot kernel on both paths, checks the outputs are identical, and
prints median wall time plus speedup.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 128]
"""
import argparse
import time

import numpy as np

from xrfrecolor import _accel, kernels
from xrfrecolor.synthesize import pixel_keys


def timed(fn, repeat):
    out = fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return out, float(np.median(times))


def cases(size, rng):
    H = W = size
    k, E = 8, 512
    p = rng.random((k, E)) ** 4
    cdfs = np.stack([kernels.make_cdf(r / r.sum()) for r in p])
    labels = rng.integers(0, k, H * W)
    keys = pixel_keys(0, H, W)
    X = rng.random((H * W, 3))
    C = rng.random((k, 3))
    Z = rng.standard_normal((2048, 3))
    zl = rng.integers(0, 6, 2048)
    return {
        f"categorical_counts {H}x{W}x{E}, 1000 counts": lambda: kernels.categorical_counts(cdfs, labels, keys, 1000),
        f"assign {H * W} px, k={k}": lambda: kernels.assign(X, C),
        f"cluster_sums {H * W} px, k={k}": lambda: kernels.cluster_sums(X, labels, k),
        "cluster_distance_sums 2048 pts, k=6": lambda: kernels.cluster_distance_sums(Z, zl, 6),
    }


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", type=int, default=128)
    args = ap.parse_args(argv)
    if _accel.numba is None:
        print("numba not importable; only the numpy path is available")
        return
    print(f"{'kernel':<46}{'numpy s':>10}{'numba s':>10}{'speedup':>9}  same")
    print("-" * 82)
    for name, fn in cases(args.size, np.random.default_rng(0)).items():
        _accel.USE_NUMBA = False
        ref, t_np = timed(fn, args.repeat)
        _accel.USE_NUMBA = True
        got, t_nb = timed(fn, args.repeat)
        ref = ref if isinstance(ref, tuple) else (ref,)
        got = got if isinstance(got, tuple) else (got,)
        same = all(np.array_equal(a, b) for a, b in zip(ref, got))
        print(f"{name:<46}{t_np:>10.4f}{t_nb:>10.4f}{t_np / t_nb:>8.1f}x  {same}")


if __name__ == "__main__":
    main()
