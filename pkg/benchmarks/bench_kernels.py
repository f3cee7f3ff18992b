"""Compare the numba and pure-numpy kernel paths.

Run directly:  python3 benchmarks/bench_kernels.py
The numpy fallback is what you get with REPDISTILL_DISABLE_NUMBA=1.
"""

import time

import numpy as np

from repdistill import kernels


def bench(fn, *args, repeats=5):
    fn(*args)  # warm up (includes jit compilation on the numba path)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    rng = np.random.default_rng(0)
    print(f"numba enabled: {kernels.NUMBA_ENABLED}")
    print(f"{'kernel':<22}{'size':<22}{'numba/current':>15}{'numpy':>12}{'speedup':>10}")
    for m, k, d in [(1000, 64, 128), (5000, 128, 128), (20000, 128, 256)]:
        points = rng.normal(size=(m, d)).astype(np.float32)
        centers = rng.normal(size=(k, d)).astype(np.float32)
        t_current = bench(kernels.assign_clusters, points, centers)
        t_numpy = bench(kernels._assign_numpy, points, centers)
        print(f"{'assign_clusters':<22}{f'{m}x{d}, k={k}':<22}"
              f"{t_current * 1e3:>13.2f}ms{t_numpy * 1e3:>10.2f}ms"
              f"{t_numpy / t_current:>9.2f}x")
    for n, d in [(200, 64), (1000, 128), (3000, 128)]:
        a = rng.normal(size=(n, d))
        b = rng.normal(size=(n, d))
        t_current = bench(kernels.gaussian_kernel_mean, a, b, 1.5)
        t_numpy = bench(kernels._kernel_mean_numpy, a, b, 1.5**2)
        print(f"{'gaussian_kernel_mean':<22}{f'{n}x{d}':<22}"
              f"{t_current * 1e3:>13.2f}ms{t_numpy * 1e3:>10.2f}ms"
              f"{t_numpy / t_current:>9.2f}x")


if __name__ == "__main__":
    main()
