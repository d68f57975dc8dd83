#!/usr/bin/env python3
"""Side-by-side timing of the numpy and numba kernel backends.

Checks that both backends agree on every input before timing them.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from ovmot import kernels


def random_boxes(rng, n):
    xy = rng.uniform(0, 500, size=(n, 2))
    wh = rng.uniform(5, 60, size=(n, 2))
    return np.ascontiguousarray(np.hstack([xy, wh]))


def unit_rows(rng, n, d):
    v = rng.normal(size=(n, d))
    return np.ascontiguousarray(v / np.linalg.norm(v, axis=1, keepdims=True))


def cases(rng):
    for n in (16, 128, 512):
        a, b = random_boxes(rng, n), random_boxes(rng, n)
        yield "iou_matrix", n, 0, (a, b)
        yield "nms_sorted", n, 1, (a, np.zeros(n, dtype=np.int64), 0.5)
        yield "bisoftmax", n, 2, (unit_rows(rng, n, 128), unit_rows(rng, n, 128), 1 / 0.07)
        present = a.copy()
        present[rng.random(n) < 0.3, 2:] = 0.0
        yield "iou_3d_aligned", n, 3, (present, b)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    if "numba" not in kernels.BACKENDS:
        print("numba not installed: only the numpy backend is available")
        return
    kernels.warmup()
    rng = np.random.default_rng(0)

    print(f"{'kernel':<16} {'n':>5}  {'numpy (ms)':>11}  {'numba (ms)':>11}  {'speedup':>8}")
    print("-" * 58)
    for name, n, slot, inputs in cases(rng):
        fn_np = kernels.BACKENDS["numpy"][slot]
        fn_nb = kernels.BACKENDS["numba"][slot]
        np.testing.assert_allclose(fn_np(*inputs), fn_nb(*inputs), rtol=1e-12, atol=1e-15)
        number = max(1, 2000 // n)
        t_np = min(timeit.repeat(lambda: fn_np(*inputs), number=number, repeat=args.repeat)) / number
        t_nb = min(timeit.repeat(lambda: fn_nb(*inputs), number=number, repeat=args.repeat)) / number
        print(f"{name:<16} {n:>5}  {1e3 * t_np:>11.4f}  {1e3 * t_nb:>11.4f}  {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
