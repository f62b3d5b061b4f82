"""Raster inner loops with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and ``STITCHGAN_DISABLE_NUMBA``
is unset (or ``0``). Both paths are always importable so tests and the
benchmark can compare them directly:

    from stitchgan import _kernels
    _kernels.numpy_impl.sobel_magnitude(gray)
    _kernels.numba_impl.sobel_magnitude(gray)   # None when numba is missing
"""
from __future__ import annotations

import os
import types

import numpy as np

ENV_FLAG = "STITCHGAN_DISABLE_NUMBA"


def _numba_requested() -> bool:
    return os.environ.get(ENV_FLAG, "0").strip().lower() in ("", "0", "false", "no")


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def _np_accumulate_patch(canvas, count, patch, weight, row, col):
    p = patch.shape[0]
    canvas[row:row + p, col:col + p] += patch * weight[:, :, None]
    count[row:row + p, col:col + p] += weight


def _np_normalize(canvas, count, out):
    np.divide(canvas, count[:, :, None], out=out)
    return out


def _np_fill_ellipses(gland, params):
    h, w = gland.shape
    for k in range(params.shape[0]):
        cy, cx, a, b, theta = params[k]
        reach = int(np.ceil(max(a, b)))
        r0, r1 = max(0, int(cy) - reach), min(h, int(cy) + reach + 2)
        c0, c1 = max(0, int(cx) - reach), min(w, int(cx) + reach + 2)
        if r0 >= r1 or c0 >= c1:
            continue
        dy = np.arange(r0, r1, dtype=np.float64)[:, None] - cy
        dx = np.arange(c0, c1, dtype=np.float64)[None, :] - cx
        ct, st = np.cos(theta), np.sin(theta)
        u = (dx * ct + dy * st) / a
        v = (-dx * st + dy * ct) / b
        gland[r0:r1, c0:c1] |= (u * u + v * v) <= 1.0


def _np_sobel_magnitude(gray):
    g = np.pad(gray, 1, mode="edge")
    gx = (g[:-2, 2:] + 2.0 * g[1:-1, 2:] + g[2:, 2:]) - (g[:-2, :-2] + 2.0 * g[1:-1, :-2] + g[2:, :-2])
    gy = (g[2:, :-2] + 2.0 * g[2:, 1:-1] + g[2:, 2:]) - (g[:-2, :-2] + 2.0 * g[:-2, 1:-1] + g[:-2, 2:])
    return np.sqrt(gx * gx + gy * gy)


def _np_nearest_palette(rgb, palette):
    diff = rgb[:, :, None, :].astype(np.float64) - palette[None, None, :, :]
    d2 = np.einsum("hwkc,hwkc->hwk", diff, diff)
    idx = np.argmin(d2, axis=2)
    return idx.astype(np.int64), np.sqrt(np.take_along_axis(d2, idx[:, :, None], axis=2)[:, :, 0])


numpy_impl = types.SimpleNamespace(
    accumulate_patch=_np_accumulate_patch,
    normalize=_np_normalize,
    fill_ellipses=_np_fill_ellipses,
    sobel_magnitude=_np_sobel_magnitude,
    nearest_palette=_np_nearest_palette,
)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba():
    from numba import njit

    @njit(cache=True)
    def accumulate_patch(canvas, count, patch, weight, row, col):
        p = patch.shape[0]
        nc = patch.shape[2]
        for i in range(p):
            for j in range(p):
                w = weight[i, j]
                for c in range(nc):
                    canvas[row + i, col + j, c] += patch[i, j, c] * w
                count[row + i, col + j] += w

    @njit(cache=True)
    def normalize(canvas, count, out):
        h, w, nc = canvas.shape
        for i in range(h):
            for j in range(w):
                n = count[i, j]
                for c in range(nc):
                    out[i, j, c] = canvas[i, j, c] / n
        return out

    @njit(cache=True)
    def fill_ellipses(gland, params):
        h, w = gland.shape
        for k in range(params.shape[0]):
            cy = params[k, 0]
            cx = params[k, 1]
            a = params[k, 2]
            b = params[k, 3]
            theta = params[k, 4]
            reach = int(np.ceil(max(a, b)))
            r0 = max(0, int(cy) - reach)
            r1 = min(h, int(cy) + reach + 2)
            c0 = max(0, int(cx) - reach)
            c1 = min(w, int(cx) + reach + 2)
            ct = np.cos(theta)
            st = np.sin(theta)
            for r in range(r0, r1):
                dy = r - cy
                for c in range(c0, c1):
                    dx = c - cx
                    u = (dx * ct + dy * st) / a
                    v = (-dx * st + dy * ct) / b
                    if u * u + v * v <= 1.0:
                        gland[r, c] = True

    @njit(cache=True)
    def sobel_magnitude(gray):
        h, w = gray.shape
        out = np.empty((h, w), dtype=np.float64)
        for i in range(h):
            im = max(i - 1, 0)
            ip = min(i + 1, h - 1)
            for j in range(w):
                jm = max(j - 1, 0)
                jp = min(j + 1, w - 1)
                gx = (gray[im, jp] + 2.0 * gray[i, jp] + gray[ip, jp]) - (
                    gray[im, jm] + 2.0 * gray[i, jm] + gray[ip, jm])
                gy = (gray[ip, jm] + 2.0 * gray[ip, j] + gray[ip, jp]) - (
                    gray[im, jm] + 2.0 * gray[im, j] + gray[im, jp])
                out[i, j] = np.sqrt(gx * gx + gy * gy)
        return out

    @njit(cache=True)
    def nearest_palette(rgb, palette):
        h, w, _ = rgb.shape
        k = palette.shape[0]
        idx = np.empty((h, w), dtype=np.int64)
        dist = np.empty((h, w), dtype=np.float64)
        for i in range(h):
            for j in range(w):
                best = 1e300
                arg = 0
                for q in range(k):
                    d2 = 0.0
                    for c in range(3):
                        t = float(rgb[i, j, c]) - palette[q, c]
                        d2 += t * t
                    if d2 < best:
                        best = d2
                        arg = q
                idx[i, j] = arg
                dist[i, j] = np.sqrt(best)
        return idx, dist

    return types.SimpleNamespace(
        accumulate_patch=accumulate_patch,
        normalize=normalize,
        fill_ellipses=fill_ellipses,
        sobel_magnitude=sobel_magnitude,
        nearest_palette=nearest_palette,
    )


try:
    numba_impl = _build_numba()
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_impl = None

USING_NUMBA = numba_impl is not None and _numba_requested()
active = numba_impl if USING_NUMBA else numpy_impl

accumulate_patch = active.accumulate_patch
normalize = active.normalize
fill_ellipses = active.fill_ellipses
sobel_magnitude = active.sobel_magnitude
nearest_palette = active.nearest_palette
