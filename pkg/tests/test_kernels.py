import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stitchgan import _kernels

pytestmark = pytest.mark.skipif(_kernels.numba_impl is None, reason="numba not importable")

NP, NB = _kernels.numpy_impl, _kernels.numba_impl


@settings(max_examples=30, deadline=None)
@given(side=st.integers(4, 24), p=st.integers(1, 8), seed=st.integers(0, 2**31))
def test_accumulate_and_normalize_parity(side, p, seed):
    p = min(p, side)
    outs = []
    for impl in (NP, NB):
        r = np.random.default_rng(seed)
        canvas = np.zeros((side, side, 3), np.float32)
        count = np.zeros((side, side), np.float32)
        for _ in range(4):
            patch = r.standard_normal((p, p, 3)).astype(np.float32)
            weight = r.random((p, p)).astype(np.float32) + 0.1
            row, col = r.integers(0, side - p + 1, 2)
            impl.accumulate_patch(canvas, count, patch, weight, int(row), int(col))
        count[count == 0] = 1
        outs.append(impl.normalize(canvas, count, np.empty_like(canvas)))
    np.testing.assert_allclose(outs[0], outs[1], rtol=1e-6, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(h=st.integers(1, 60), w=st.integers(1, 60), seed=st.integers(0, 2**31))
def test_fill_ellipses_parity(h, w, seed):
    rng = np.random.default_rng(seed)
    k = rng.integers(0, 6)
    params = np.column_stack([rng.uniform(-10, h + 10, k), rng.uniform(-10, w + 10, k),
                              rng.uniform(0.5, 20, k), rng.uniform(0.5, 20, k), rng.uniform(0, np.pi, k)])
    a = np.zeros((h, w), bool)
    b = np.zeros((h, w), bool)
    NP.fill_ellipses(a, params)
    NB.fill_ellipses(b, params)
    np.testing.assert_array_equal(a, b)


def test_fill_ellipses_brute_force(rng):
    params = np.array([[20.3, 30.7, 12.0, 5.0, 0.6], [5.0, 5.0, 3.0, 3.0, 0.0]])
    got = np.zeros((50, 60), bool)
    _kernels.fill_ellipses(got, params)
    want = np.zeros_like(got)
    for r in range(50):
        for c in range(60):
            for cy, cx, a, b, t in params:
                u = ((c - cx) * np.cos(t) + (r - cy) * np.sin(t)) / a
                v = (-(c - cx) * np.sin(t) + (r - cy) * np.cos(t)) / b
                want[r, c] |= u * u + v * v <= 1.0
    np.testing.assert_array_equal(got, want)


@settings(max_examples=30, deadline=None)
@given(h=st.integers(1, 40), w=st.integers(1, 40), seed=st.integers(0, 2**31))
def test_sobel_parity(h, w, seed):
    g = np.random.default_rng(seed).random((h, w))
    np.testing.assert_allclose(NP.sobel_magnitude(g), NB.sobel_magnitude(g), rtol=1e-12, atol=1e-12)


def test_sobel_matches_scipy():
    from scipy import ndimage
    g = np.random.default_rng(3).random((17, 23))
    gx = ndimage.sobel(g, axis=1, mode="nearest")
    gy = ndimage.sobel(g, axis=0, mode="nearest")
    np.testing.assert_allclose(_kernels.sobel_magnitude(g), np.hypot(gx, gy), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 50), seed=st.integers(0, 2**31))
def test_nearest_palette_parity(n, seed):
    rng = np.random.default_rng(seed)
    rgb = rng.integers(0, 256, (n, 7, 3)).astype(np.float64)
    pal = rng.integers(0, 256, (4, 3)).astype(np.float64)
    i0, d0 = NP.nearest_palette(rgb, pal)
    i1, d1 = NB.nearest_palette(rgb, pal)
    np.testing.assert_allclose(d0, d1, atol=1e-9)
    # ties may break differently only if distances are equal
    np.testing.assert_allclose(np.linalg.norm(rgb - pal[i0], axis=-1), np.linalg.norm(rgb - pal[i1], axis=-1))


@pytest.mark.parametrize("flag,expected", [("1", "False"), ("0", "True")])
def test_env_flag_selects_backend(flag, expected):
    env = dict(os.environ, STITCHGAN_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from stitchgan import _kernels; print(_kernels.USING_NUMBA)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
