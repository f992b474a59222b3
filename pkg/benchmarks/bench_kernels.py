"""Time the compiled kernels against the pure-numpy fallback.

Runs the same workloads through rastertrack.kernels._native (when built)
and rastertrack.kernels.pyfallback, and prints per-size medians plus the
speedup. Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from rastertrack.kernels import pyfallback

try:
    from rastertrack.kernels import _native
except ImportError:
    _native = None

_ASSIGN_SIZES = [8, 32, 128, 256]
_IOU_SIZES = [16, 64, 256, 1024]


def _time(fn, repeats: int) -> float:
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def _row(label: str, fallback_s: float, native_s: float | None) -> str:
    if native_s is None:
        return f"{label:<24}{fallback_s * 1e3:>12.3f}{'-':>12}{'-':>9}"
    return (f"{label:<24}{fallback_s * 1e3:>12.3f}"
            f"{native_s * 1e3:>12.3f}{fallback_s / native_s:>8.2f}x")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=7)
    parser.add_argument("--seed", type=int, default=12345)
    args = parser.parse_args()
    rng = np.random.default_rng(args.seed)

    if _native is None:
        print("native extension not built; timing fallback only")
    print(f"{'workload':<24}{'fallback ms':>12}{'native ms':>12}{'speedup':>9}")

    for n in _ASSIGN_SIZES:
        cost = rng.random((n, n))
        fb = _time(lambda: pyfallback.lsa_rect(cost), args.repeats)
        nat = None
        if _native is not None:
            nat = _time(lambda: _native.lsa_rect(cost), args.repeats)
            rf = pyfallback.lsa_rect(cost)
            rn = _native.lsa_rect(cost)
            assert cost[rf].sum() == cost[rn].sum(), "backends disagree"
        print(_row(f"assign {n}x{n}", fb, nat))

    for n in _IOU_SIZES:
        boxes = rng.random((n, 4)) * [[100, 100, 5, 5]] + [[0, 0, 1, 1]]
        fb = _time(lambda: pyfallback.iou_matrix(boxes, boxes), args.repeats)
        nat = None
        if _native is not None:
            nat = _time(lambda: _native.iou_matrix(boxes, boxes),
                        args.repeats)
            assert np.allclose(pyfallback.iou_matrix(boxes, boxes),
                               _native.iou_matrix(boxes, boxes))
        print(_row(f"iou {n}x{n}", fb, nat))


if __name__ == "__main__":
    main()
