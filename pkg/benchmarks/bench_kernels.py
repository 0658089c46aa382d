"""Benchmark the numba-jitted LSTM kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_kernels.py [--runs N]

The same kernels power both backends (kernels.py compiles one source twice),
so outputs are checked for agreement as well as timed. Select the backend
used by training with CAPSAUDIO_BACKEND=numpy|numba.
"""

import argparse
import time

import numpy as np

from capsaudio import kernels

SHAPES = [
    # (T, B, I, H) ~ one BiLSTM direction at desk scale
    (40, 32, 60, 64),
    (80, 16, 60, 32),
    (100, 8, 124, 64),
]


def bench(fn, args, runs):
    fn(*args)  # warmup / JIT
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--runs", type=int, default=5)
    args = parser.parse_args()

    if kernels.lstm_forward_numba is None:
        print("numba unavailable; nothing to compare")
        return

    print(f"active backend: {kernels.ACTIVE_BACKEND}")
    print(f"{'shape (T,B,I,H)':>20} {'dir':>8} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    rng = np.random.default_rng(0)
    for T, B, I, H in SHAPES:
        x = rng.normal(size=(T, B, I))
        Wx = rng.normal(size=(I, 4 * H)) * 0.1
        Wh = rng.normal(size=(H, 4 * H)) * 0.1
        b = np.zeros(4 * H)

        t_np = bench(kernels.lstm_forward_numpy, (x, Wx, Wh, b), args.runs)
        t_nb = bench(kernels.lstm_forward_numba, (x, Wx, Wh, b), args.runs)
        h1, c1, g1 = kernels.lstm_forward_numpy(x, Wx, Wh, b)
        h2, c2, g2 = kernels.lstm_forward_numba(x, Wx, Wh, b)
        agree = np.allclose(h1, h2, atol=1e-12)
        print(f"{str((T, B, I, H)):>20} {'fwd':>8} {t_np * 1e3:9.2f}ms "
              f"{t_nb * 1e3:9.2f}ms {t_np / t_nb:7.2f}x  match={agree}")

        dh = rng.normal(size=h1.shape)
        t_np = bench(kernels.lstm_backward_numpy, (dh, x, Wx, Wh, h1, c1, g1), args.runs)
        t_nb = bench(kernels.lstm_backward_numba, (dh, x, Wx, Wh, h2, c2, g2), args.runs)
        o1 = kernels.lstm_backward_numpy(dh, x, Wx, Wh, h1, c1, g1)
        o2 = kernels.lstm_backward_numba(dh, x, Wx, Wh, h2, c2, g2)
        agree = all(np.allclose(a, b_, atol=1e-11) for a, b_ in zip(o1, o2))
        print(f"{'':>20} {'bwd':>8} {t_np * 1e3:9.2f}ms "
              f"{t_nb * 1e3:9.2f}ms {t_np / t_nb:7.2f}x  match={agree}")


if __name__ == "__main__":
    main()
