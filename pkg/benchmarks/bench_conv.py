"""Timing comparison of the compiled convolution core vs the pure-numpy
fallback, plus the FFT path, on representative sizes.

Run:  python benchmarks/bench_conv.py
"""

import time

import numpy as np

from ocdl import _convcore_py

try:
    from ocdl import _convcore
except ImportError:
    _convcore = None

from ocdl import conv


def _time(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    cases = [
        (16, 5),
        (32, 9),
        (64, 9),
        (64, 15),
        (128, 15),
    ]
    print("active backend: %s" % conv.BACKEND)
    print("%8s %8s %12s %12s %12s %8s" % ("size", "kernel", "compiled", "python", "fft", "speedup"))
    for n, p in cases:
        a = rng.standard_normal((n + p - 1, n + p - 1))
        b = rng.standard_normal((p, p))
        t_py = _time(_convcore_py.conv_valid_direct, a, b)
        t_fft = _time(lambda: conv.conv_valid(a, b, method="fft"))
        if _convcore is not None:
            t_c = _time(_convcore.conv_valid_direct, a, b)
            out_c = _convcore.conv_valid_direct(a, b)
            out_py = _convcore_py.conv_valid_direct(a, b)
            assert np.allclose(out_c, out_py, atol=1e-12)
            speed = t_py / t_c
            print("%8d %8d %12.6f %12.6f %12.6f %7.1fx"
                  % (n, p, t_c, t_py, t_fft, speed))
        else:
            print("%8d %8d %12s %12.6f %12.6f %8s"
                  % (n, p, "n/a", t_py, t_fft, "n/a"))


if __name__ == "__main__":
    main()
