#!/usr/bin/env python3
"""Benchmark the conv1d hot kernels: compiled extension vs numpy fallback.

Times the forward pass and both backward passes on a few shapes that bracket
the training workload, then prints per-op timings and the speedup of the
compiled backend. Runs with whatever backends are importable; if the
extension is missing only the numpy column is shown.
"""

import argparse
import time

import numpy as np

from shufflestitch._kernels import conv1d_numpy

try:
    from shufflestitch._kernels import _conv1d_cy
except ImportError:
    _conv1d_cy = None

# label, time steps, input channels, output channels, kernel width, padding
CASES = [
    ("small signal", 64, 1, 16, 5, 2),
    ("hidden stack", 64, 16, 16, 5, 2),
    ("wide channels", 256, 7, 48, 5, 2),
    ("long context", 1024, 48, 48, 3, 1),
]


def best_of(fn, args, repeats):
    fn(*args)
    best = float("inf")
    for _ in range(repeats):
        started = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - started)
    return best


def case_ops(t, c_in, c_out, k, pad, rng):
    x = rng.normal(size=(t, c_in))
    w = rng.normal(size=(k, c_in, c_out))
    gy = rng.normal(size=(t + 2 * pad - k + 1, c_out))
    return [
        ("forward", "conv1d_forward", (x, w, pad)),
        ("backward input", "conv1d_backward_input", (gy, w, t, pad)),
        ("backward kernel", "conv1d_backward_kernel", (gy, x, k, pad)),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=50,
                        help="timing repeats per op (best is kept)")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"conv1d kernel benchmark (repeats={args.repeats})")
    if _conv1d_cy is None:
        print("compiled extension not available; timing numpy only\n")
    else:
        print("backends: numpy fallback vs compiled extension\n")

    header = f"{'case':<14} {'op':<16} {'numpy':>10}"
    if _conv1d_cy is not None:
        header += f" {'compiled':>10} {'speedup':>8}"
    print(header)

    for label, t, c_in, c_out, k, pad in CASES:
        for op_label, name, op_args in case_ops(t, c_in, c_out, k, pad, rng):
            np_fn = getattr(conv1d_numpy, name)
            np_time = best_of(np_fn, op_args, args.repeats)
            row = f"{label:<14} {op_label:<16} {np_time * 1e3:>8.3f}ms"
            if _conv1d_cy is not None:
                cy_fn = getattr(_conv1d_cy, name)
                # both backends must agree before their timings are comparable
                np.testing.assert_allclose(cy_fn(*op_args), np_fn(*op_args),
                                           atol=1e-12)
                cy_time = best_of(cy_fn, op_args, args.repeats)
                row += f" {cy_time * 1e3:>8.3f}ms {np_time / cy_time:>7.2f}x"
            print(row)


if __name__ == "__main__":
    main()
