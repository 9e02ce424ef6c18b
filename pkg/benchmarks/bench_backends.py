"""Benchmark the numba kernels against the pure-numpy fallback.

Times the four hot kernels plus the metric entry points that use them, and
reports per-backend wall times and cross-backend agreement.

    python3 benchmarks/bench_backends.py [--size 96] [--repeats 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from relict import backends
from relict.image_metrics import SsimParams, gaussian_kernel


def time_call(fn, *args, repeats: int) -> tuple[float, object]:
    best = float("inf")
    result = None
    for _ in range(repeats):
        started = time.perf_counter()
        result = fn(*args)
        best = min(best, time.perf_counter() - started)
    return best, result


def filter3(impl, arr, kernel):
    out = arr
    for axis in range(3):
        moved = np.moveaxis(out, axis, -1)
        shape = moved.shape
        flat = np.ascontiguousarray(moved).reshape(-1, shape[-1])
        res = impl["correlate_last"](flat, kernel)
        out = np.moveaxis(res.reshape(shape[:-1] + (res.shape[-1],)), -1, axis)
    return out


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=96, help="volume edge length")
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--surface-points", type=int, default=3000)
    args = parser.parse_args()

    impls = backends.implementations()
    if "numba" not in impls:
        print("numba is not importable; nothing to compare")
        return

    rng = np.random.default_rng(0)
    shape = (args.size, args.size, args.size)
    vol_a = rng.standard_normal(shape)
    vol_b = vol_a + 0.1 * rng.standard_normal(shape)
    flat_a, flat_b = vol_a.reshape(-1), vol_b.reshape(-1)
    kernel = gaussian_kernel(SsimParams().sigma, SsimParams().window_radius)
    points_a = rng.random((args.surface_points, 3)) * args.size
    points_b = rng.random((args.surface_points, 3)) * args.size

    cases = {
        "sum_abs_diff": lambda impl: impl["sum_abs_diff"](flat_a, flat_b),
        "sum_sq_diff": lambda impl: impl["sum_sq_diff"](flat_a, flat_b),
        "gaussian_filter3 (ssim core)": lambda impl: filter3(impl, vol_a, kernel),
        "directed_min_sqdist": lambda impl: impl["directed_min_sqdist"](
            points_a, points_b
        ),
    }

    print(f"volume {shape}, {args.surface_points} surface points, "
          f"best of {args.repeats} runs\n")
    print(f"{'kernel':<30} {'numpy':>10} {'numba':>10} {'speedup':>9}  agreement")
    for name, runner in cases.items():
        runner(impls["numba"])  # absorb JIT compilation outside the timing
        t_np, r_np = time_call(runner, impls["numpy"], repeats=args.repeats)
        t_nb, r_nb = time_call(runner, impls["numba"], repeats=args.repeats)
        delta = float(np.max(np.abs(np.asarray(r_np) - np.asarray(r_nb))))
        print(
            f"{name:<30} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
            f"{t_np / t_nb:>8.1f}x  max|diff|={delta:.2e}"
        )


if __name__ == "__main__":
    main()
