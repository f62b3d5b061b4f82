"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--side 1024]

Each kernel is called once before timing so JIT compilation is excluded.
Prints one row per kernel with the best-of-N wall time of both paths.
"""
import argparse
import time

import numpy as np

from stitchgan import _kernels
from stitchgan.geometry import CLASS_COLORS, TOY_GEOMETRY, plan_grid


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(side, rng):
    geom = TOY_GEOMETRY
    grid = plan_grid((side, side), geom)
    p = geom.patch_out
    patches = rng.standard_normal((len(grid), p, p, 3)).astype(np.float32)
    weight = np.ones((p, p), dtype=np.float32)

    def stitch(impl):
        canvas = np.zeros((side, side, 3), dtype=np.float32)
        count = np.zeros((side, side), dtype=np.float32)
        for k, (r, c) in enumerate(grid.origins):
            impl.accumulate_patch(canvas, count, patches[k], weight, r, c)
        impl.normalize(canvas, count, canvas)

    n_ell = side * side // 2000
    ell = np.column_stack([rng.uniform(0, side, n_ell), rng.uniform(0, side, n_ell),
                           rng.uniform(8, 32, n_ell), rng.uniform(8, 32, n_ell),
                           rng.uniform(0, np.pi, n_ell)])
    gray = rng.random((side, side))
    rgb = rng.integers(0, 256, (side, side, 3)).astype(np.float64)
    palette = np.vstack([np.asarray(CLASS_COLORS, dtype=np.float64), np.zeros((1, 3))])

    return {
        f"stitch {len(grid)} patches": stitch,
        f"fill_ellipses x{n_ell}": lambda impl: impl.fill_ellipses(np.zeros((side, side), bool), ell),
        "sobel_magnitude": lambda impl: impl.sobel_magnitude(gray),
        "nearest_palette": lambda impl: impl.nearest_palette(rgb, palette),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--side", type=int, default=1024)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if _kernels.numba_impl is None:
        print("numba unavailable; nothing to compare")
        return
    rng = np.random.default_rng(args.seed)
    print(f"side={args.side} repeat={args.repeat}")
    print(f"{'kernel':<28} {'numpy (ms)':>11} {'numba (ms)':>11} {'speedup':>8}")
    for name, fn in cases(args.side, rng).items():
        t_np = best_of(lambda: fn(_kernels.numpy_impl), args.repeat)
        t_nb = best_of(lambda: fn(_kernels.numba_impl), args.repeat)
        print(f"{name:<28} {t_np * 1e3:>11.2f} {t_nb * 1e3:>11.2f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
