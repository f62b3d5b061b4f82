"""Paired image/mask loading, sliding-window tile extraction and the toy dataset."""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import TileGeometry, decode_mask, encode_mask, mask_to_labels
from .maskgen import MaskSpec, synthesize_mask
from .training import TrainingSample

# Renderer colours in [-1, 1], class order (gland, stroma, background).
TOY_COLORS = np.array([
    [0.35, -0.45, 0.55],   # gland: purple
    [0.80, 0.10, 0.45],    # stroma: pink
    [0.85, 0.85, 0.90],    # background: near white
], dtype=np.float32)
TOY_NOISE_STD = 0.05


def to_unit_range(img8: np.ndarray) -> np.ndarray:
    return img8.astype(np.float32) * (2.0 / 255.0) - 1.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(img, dtype=np.float64) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def read_rgb(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def write_rgb(path, rgb: np.ndarray) -> None:
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), mode="RGB").save(Path(path))


def read_mask(path, max_distance: float = 96.0) -> np.ndarray:
    return decode_mask(read_rgb(path), max_distance=max_distance)


def write_mask(path, mask: np.ndarray) -> None:
    write_rgb(path, encode_mask(mask))


def write_tile(path, tile: np.ndarray) -> None:
    write_rgb(path, to_uint8(tile))


def load_pair(image_path, mask_path) -> TrainingSample:
    image = to_unit_range(read_rgb(image_path))
    mask = read_mask(mask_path)
    if image.shape != mask.shape:
        raise ValueError(f"image {image.shape[:2]} and mask {mask.shape[:2]} dims differ")
    return TrainingSample(mask=mask, image=image)


def discover_pairs(root) -> list[tuple[Path, Path]]:
    """Pairs from ``root/images/*.png`` and ``root/masks/*.png`` matched by stem, or a ``manifest.txt``.

    Manifest lines are ``image_path mask_path`` relative to ``root``.
    """
    root = Path(root)
    manifest = root / "manifest.txt"
    if manifest.is_file():
        pairs = []
        for line in manifest.read_text().splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                img, msk = line.split()
                pairs.append((root / img, root / msk))
        return pairs
    masks = {p.stem: p for p in (root / "masks").glob("*.png")}
    return [(p, masks[p.stem]) for p in sorted((root / "images").glob("*.png")) if p.stem in masks]


def tile_count(dims: tuple[int, int], tile_side: int, stride: int) -> int:
    h, w = dims
    if tile_side > min(h, w):
        return 0
    return ((h - tile_side) // stride + 1) * ((w - tile_side) // stride + 1)


def extract_tiles(image: np.ndarray, mask: np.ndarray, tile_side: int, stride: int) -> list[TrainingSample]:
    """Row-major sliding-window crops; windows past the border are dropped."""
    if image.shape[:2] != mask.shape[:2]:
        raise ValueError("image and mask dims differ")
    h, w = image.shape[:2]
    if tile_side > h or tile_side > w:
        raise ValueError(f"tile side {tile_side} exceeds image dims {(h, w)}")
    if stride < 1:
        raise ValueError("stride must be positive")
    return [TrainingSample(mask=mask[r:r + tile_side, c:c + tile_side].copy(),
                           image=image[r:r + tile_side, c:c + tile_side].copy())
            for r in range(0, h - tile_side + 1, stride)
            for c in range(0, w - tile_side + 1, stride)]


def render_toy_image(mask: np.ndarray, rng: np.random.Generator, colors=TOY_COLORS,
                     noise_std: float = TOY_NOISE_STD) -> np.ndarray:
    """Flat class colours plus Gaussian noise, clipped to [-1, 1]."""
    labels = mask_to_labels(mask)
    img = np.where(labels[..., None] >= 0, colors[np.maximum(labels, 0)], -1.0).astype(np.float32)
    img += rng.normal(0.0, noise_std, size=img.shape).astype(np.float32)
    return np.clip(img, -1.0, 1.0)


def make_toy_dataset(n: int, geom: TileGeometry, seed: int = 0, tile_side: int | None = None) -> list[TrainingSample]:
    """``n`` synthetic (mask, image) pairs; default tile side gives a 3 x 3 patch grid."""
    if n < 1:
        raise ValueError("n must be >= 1")
    side = tile_side or geom.patch_out + 2 * geom.stride
    seeds = np.random.SeedSequence(seed).spawn(n)
    out = []
    for k, ss in enumerate(seeds):
        mask_seed, noise_seed = ss.generate_state(2)
        mask = synthesize_mask(MaskSpec(side, side, seed=int(mask_seed)))
        image = render_toy_image(mask, np.random.default_rng(int(noise_seed)))
        out.append(TrainingSample(mask=mask, image=image))
    return out
