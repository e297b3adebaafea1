"""Time the numba kernels against the pure-numpy fallback.

Run:  python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from laco import kernels


def bench(fn, *args, repeat=200):
    fn(*args)  # warmup / JIT
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat * 1e6  # microseconds


def main():
    rng = np.random.default_rng(0)
    shapes = [
        ("decode  H=2  n=64   dh=8", 2, 64, 8),
        ("decode  H=4  n=256  dh=16", 4, 256, 16),
        ("decode  H=8  n=1024 dh=32", 8, 1024, 32),
    ]
    print(f"numba available: {kernels.USING_NUMBA} (active backend: {kernels.backend_name()})")
    print(f"{'case':28s} {'numpy us':>10s} {'numba us':>10s} {'speedup':>8s}")
    for name, H, n, dh in shapes:
        k = rng.normal(size=(H, n, dh)).astype(np.float32)
        v = rng.normal(size=(H, n, dh)).astype(np.float32)
        q = rng.normal(size=(H, dh)).astype(np.float32)
        t_np = bench(kernels.attend_single_numpy, k, v, q, 1.0 / np.sqrt(dh))
        if kernels.USING_NUMBA:
            t_nb = bench(kernels.attend_single_numba, k, v, q, 1.0 / np.sqrt(dh))
            print(f"{name:28s} {t_np:10.1f} {t_nb:10.1f} {t_np / t_nb:7.2f}x")
        else:
            print(f"{name:28s} {t_np:10.1f} {'-':>10s} {'-':>8s}")

    prefill_shapes = [
        ("prefill H=2  T=64   dh=8", 2, 64, 8),
        ("prefill H=4  T=256  dh=16", 4, 256, 16),
    ]
    for name, H, T, dh in prefill_shapes:
        q = rng.normal(size=(H, T, dh)).astype(np.float32)
        k = rng.normal(size=(H, T, dh)).astype(np.float32)
        v = rng.normal(size=(H, T, dh)).astype(np.float32)
        t_np = bench(kernels.attend_causal_numpy, q, k, v, 1.0 / np.sqrt(dh), repeat=50)
        if kernels.USING_NUMBA:
            t_nb = bench(kernels.attend_causal_numba, q, k, v, 1.0 / np.sqrt(dh), repeat=50)
            print(f"{name:28s} {t_np:10.1f} {t_nb:10.1f} {t_np / t_nb:7.2f}x")
        else:
            print(f"{name:28s} {t_np:10.1f} {'-':>10s} {'-':>8s}")


if __name__ == "__main__":
    main()
