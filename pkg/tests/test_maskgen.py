from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stitchgan.geometry import BACKGROUND, GLAND, STROMA, labels_to_mask, mask_to_labels
from stitchgan.maskgen import MaskSpec, mask_class_stats, place_glands, rasterize_glands, synthesize_mask


def test_spec_validation():
    with pytest.raises(ValueError):
        MaskSpec(10, 10, stroma_prob=0.8, background_prob=0.1)
    with pytest.raises(ValueError):
        MaskSpec(0, 10)
    with pytest.raises(ValueError):
        MaskSpec(10, 10, glands_per_block=(5, 3))
    with pytest.raises(ValueError):
        MaskSpec(10, 10, axis_range=(0.0, 4.0))


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), blocks=st.integers(1, 4))
def test_full_blocks_hold_3_to_7_glands(seed, blocks):
    side = 100 * blocks
    glands = place_glands(MaskSpec(side, side, seed=seed))
    counts = Counter(g.block for g in glands)
    for br in range(blocks):
        for bc in range(blocks):
            assert 3 <= counts[(br, bc)] <= 7
    for g in glands:
        br, bc = g.block
        assert br * 100 <= g.center[0] < (br + 1) * 100
        assert bc * 100 <= g.center[1] < (bc + 1) * 100


def test_partial_blocks_scale_with_area():
    glands = place_glands(MaskSpec(1000, 1050, seed=4))
    edge = [g for g in glands if g.block[1] == 10]
    assert 0 < len(edge) <= 10 * 4


def test_determinism_and_seed_sensitivity():
    a = synthesize_mask(MaskSpec(120, 150, seed=3))
    b = synthesize_mask(MaskSpec(120, 150, seed=3))
    c = synthesize_mask(MaskSpec(120, 150, seed=4))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_output_is_one_hot_and_glands_kept():
    mask, glands = synthesize_mask(MaskSpec(200, 200, seed=1), return_glands=True)
    assert mask.shape == (200, 200, 3)
    assert (mask.sum(-1) == 1).all()
    gland = rasterize_glands(glands, (200, 200))
    labels = mask_to_labels(mask)
    assert (labels[gland] == GLAND).all()
    assert (labels[~gland] != GLAND).all()


def test_stroma_prob_one_means_no_background():
    mask = synthesize_mask(MaskSpec(150, 150, stroma_prob=1.0, background_prob=0.0, seed=2))
    assert (mask_to_labels(mask) != BACKGROUND).all()


def test_non_gland_stroma_fraction_binomial():
    # binomial oracle: with ~5e5 non-gland pixels the std of the fraction is ~4e-4
    fracs = []
    for seed in range(3):
        labels = mask_to_labels(synthesize_mask(MaskSpec(1000, 1000, seed=seed)))
        non_gland = labels != GLAND
        fracs.append((labels[non_gland] == STROMA).mean())
    assert abs(np.mean(fracs) - 0.9) < 0.005


def test_default_gland_fraction_band():
    g, s, b = mask_class_stats(synthesize_mask(MaskSpec(1000, 1000, seed=0)))
    assert 0.02 < g < 0.6
    assert abs(g + s + b - 1) < 1e-12


def test_mask_class_stats_examples():
    assert mask_class_stats(labels_to_mask(np.full((8, 8), GLAND))) == (1.0, 0.0, 0.0)
    checker = np.indices((8, 8)).sum(0) % 2
    assert mask_class_stats(labels_to_mask(np.where(checker, GLAND, STROMA))) == (0.5, 0.5, 0.0)
    with_pad = np.full((4, 4), -1)
    with_pad[0] = BACKGROUND
    assert mask_class_stats(labels_to_mask(with_pad)) == (0.0, 0.0, 1.0)


def test_smooth_option_removes_isolated_background():
    raw = mask_to_labels(synthesize_mask(MaskSpec(200, 200, seed=5)))
    smooth = mask_to_labels(synthesize_mask(MaskSpec(200, 200, seed=5, smooth=True)))
    assert (smooth == BACKGROUND).mean() < (raw == BACKGROUND).mean()
    np.testing.assert_array_equal(smooth == GLAND, raw == GLAND)
