import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stitchgan.data import (TOY_COLORS, TOY_NOISE_STD, discover_pairs, extract_tiles, load_pair,
                            make_toy_dataset, read_mask, read_rgb, tile_count, to_uint8, to_unit_range,
                            write_mask, write_rgb, write_tile)
from stitchgan.geometry import TOY_GEOMETRY, mask_to_labels
from stitchgan.maskgen import MaskSpec, synthesize_mask


def test_unit_range_endpoints():
    assert to_unit_range(np.array([255], np.uint8))[0] == 1.0
    assert to_unit_range(np.array([0], np.uint8))[0] == -1.0
    assert abs(to_unit_range(np.array([128], np.uint8))[0] - (2 * 128 / 255 - 1)) < 1e-7
    assert abs(2 * 128 / 255 - 1 - 0.00392) < 1e-5


def test_uint8_round_trip_lossless():
    v = np.arange(256, dtype=np.uint8)
    np.testing.assert_array_equal(to_uint8(to_unit_range(v)), v)


def test_png_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, (20, 30, 3), dtype=np.uint8)
    write_rgb(tmp_path / "a.png", img)
    np.testing.assert_array_equal(read_rgb(tmp_path / "a.png"), img)
    mask = synthesize_mask(MaskSpec(20, 30, seed=1))
    write_mask(tmp_path / "m.png", mask)
    np.testing.assert_array_equal(read_mask(tmp_path / "m.png"), mask)
    tile = to_unit_range(img)
    write_tile(tmp_path / "t.png", tile)
    sample = load_pair(tmp_path / "t.png", tmp_path / "m.png")
    np.testing.assert_array_equal(sample.image, tile)
    np.testing.assert_array_equal(sample.mask, mask)


def test_load_pair_dim_mismatch(tmp_path):
    write_rgb(tmp_path / "a.png", np.zeros((10, 10, 3), np.uint8))
    write_mask(tmp_path / "m.png", synthesize_mask(MaskSpec(12, 10)))
    with pytest.raises(ValueError):
        load_pair(tmp_path / "a.png", tmp_path / "m.png")


def test_discover_pairs(tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "masks").mkdir()
    for name in ("b", "a", "c"):
        write_rgb(tmp_path / "images" / f"{name}.png", np.zeros((4, 4, 3), np.uint8))
    for name in ("a", "b"):
        write_mask(tmp_path / "masks" / f"{name}.png", synthesize_mask(MaskSpec(4, 4)))
    pairs = discover_pairs(tmp_path)
    assert [p[0].stem for p in pairs] == ["a", "b"]
    assert all(i.stem == m.stem for i, m in pairs)


def test_extract_tiles_crag_dims():
    assert tile_count((1512, 1516), 728, 200) == 16
    img = np.zeros((1512, 1516, 3), np.float32)
    mask = np.zeros((1512, 1516, 3), np.float32)
    tiles = extract_tiles(img, mask, 728, 200)
    assert len(tiles) == 16
    assert len(extract_tiles(img[:728, :728], mask[:728, :728], 728, 17)) == 1
    assert len(extract_tiles(img[:800, :800], mask[:800, :800], 728, 100)) == 1
    with pytest.raises(ValueError):
        extract_tiles(img[:100, :100], mask[:100, :100], 728, 200)


@settings(max_examples=40, deadline=None)
@given(h=st.integers(4, 60), w=st.integers(4, 60), t=st.integers(1, 30), s=st.integers(1, 20))
def test_extract_tiles_count_formula(h, w, t, s):
    img = np.zeros((h, w, 3), np.float32)
    if t > min(h, w):
        assert tile_count((h, w), t, s) == 0
        return
    tiles = extract_tiles(img, img, t, s)
    assert len(tiles) == ((h - t) // s + 1) * ((w - t) // s + 1) == tile_count((h, w), t, s)
    assert all(x.image.shape == (t, t, 3) for x in tiles)


def test_extract_tiles_row_major_content(rng):
    img = rng.random((10, 12, 3)).astype(np.float32)
    tiles = extract_tiles(img, img, 4, 3)
    np.testing.assert_array_equal(tiles[1].image, img[0:4, 3:7])
    np.testing.assert_array_equal(tiles[3].image, img[3:7, 0:4])


def test_toy_dataset():
    a = make_toy_dataset(5, TOY_GEOMETRY, seed=3)
    b = make_toy_dataset(5, TOY_GEOMETRY, seed=3)
    assert len(a) == 5
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.image, y.image)
        np.testing.assert_array_equal(x.mask, y.mask)
        assert x.mask.shape == (176, 176, 3) and x.image.shape == (176, 176, 3)
        assert x.image.min() >= -1 and x.image.max() <= 1


def test_toy_renderer_class_means():
    ds = make_toy_dataset(3, TOY_GEOMETRY, seed=0)
    for k in range(3):
        px = np.concatenate([s.image[mask_to_labels(s.mask) == k] for s in ds])
        # noise is zero-mean; clipping only bites for channels near +-1
        np.testing.assert_allclose(px.mean(0), TOY_COLORS[k], atol=4 * TOY_NOISE_STD / np.sqrt(len(px)) + 1e-3)
        assert abs(px.std(0).mean() - TOY_NOISE_STD) < 0.01
