"""Time the numba and pure-numpy kernels on workloads shaped like the default scene.

    python3 benchmarks/bench_kernels.py [--repeat N]

The first numba call per kernel is reported separately (JIT compile or cache load).
"""

import argparse
import time

import numpy as np

from beamprobe import kernels


def workloads(rng):
    B = 21
    power = rng.exponential(size=(2000 * B // 10, 256))
    scores = [rng.normal(size=B) for _ in range(2000)]
    shield = []
    for _ in range(2000):
        idx = rng.choice(B, size=3, replace=False).astype(np.int64)
        shield.append((idx, rng.normal(3, 3, size=3), rng.normal(3, 3, size=B),
                       int(rng.integers(B))))
    return {
        "snr_proxy_rows (4200 x 256)": lambda impl: impl.snr_proxy_rows(power, 99.7, 20.0, 1e-12),
        "zscore_rows (2000 x 21)": lambda impl: impl.zscore_rows(np.stack(scores), 1e-8),
        "greedy_select x2000 (K=3)": lambda impl: [impl.greedy_select(s, 3, 1) for s in scores],
        "shield_lock x2000": lambda impl: [impl.shield_lock(i, s, lk.copy(), p, 2, 3.0, False)
                                           for i, s, lk, p in shield],
    }


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    if kernels.numba_impl is None:
        print("numba is not installed; only the numpy kernels can be timed")
    print(f"{'kernel':32s} {'numpy ms':>10s} {'numba ms':>10s} {'first call ms':>14s} {'speedup':>8s}")
    for name, run in workloads(rng).items():
        t_np = best_of(lambda: run(kernels.numpy_impl), args.repeat)
        if kernels.numba_impl is None:
            print(f"{name:32s} {t_np * 1e3:10.2f}")
            continue
        t0 = time.perf_counter()
        run(kernels.numba_impl)
        first = time.perf_counter() - t0
        t_nb = best_of(lambda: run(kernels.numba_impl), args.repeat)
        print(f"{name:32s} {t_np * 1e3:10.2f} {t_nb * 1e3:10.2f} {first * 1e3:14.1f} "
              f"{t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
