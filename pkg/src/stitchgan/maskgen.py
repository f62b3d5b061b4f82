"""Procedural tissue component masks: random elliptical glands on a stroma/background fill."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import BACKGROUND, GLAND, STROMA, labels_to_mask, mask_to_labels


@dataclass(frozen=True)
class MaskSpec:
    height: int
    width: int
    glands_per_block: tuple[int, int] = (3, 7)
    axis_range: tuple[float, float] = (8.0, 32.0)
    stroma_prob: float = 0.9
    background_prob: float = 0.1
    block: int = 100
    seed: int = 0
    smooth: bool = False

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("mask dims must be positive")
        if min(self.stroma_prob, self.background_prob) < 0 or abs(self.stroma_prob + self.background_prob - 1) > 1e-9:
            raise ValueError(
                f"stroma_prob + background_prob must equal 1, got {self.stroma_prob} + {self.background_prob}")
        lo, hi = self.glands_per_block
        if not 1 <= lo <= hi <= 50:
            raise ValueError(f"glands_per_block must lie within [1, 50], got {self.glands_per_block}")
        a0, a1 = self.axis_range
        if not 0 < a0 <= a1 < self.block:
            raise ValueError(f"axis_range must be positive and below the block side, got {self.axis_range}")


@dataclass(frozen=True)
class Gland:
    center: tuple[float, float]
    semi_axes: tuple[float, float]
    angle: float
    block: tuple[int, int]


def place_glands(spec: MaskSpec) -> list[Gland]:
    """Draw gland ellipses block by block.

    Full blocks get a count uniform on ``glands_per_block``. Partial blocks on the
    right/bottom edges get that count scaled by their area fraction, rounded
    stochastically, so density stays uniform.
    """
    seq = np.random.SeedSequence(spec.seed)
    n_br = -(-spec.height // spec.block)
    n_bc = -(-spec.width // spec.block)
    block_seqs = seq.spawn(n_br * n_bc + 1)[1:]
    lo, hi = spec.glands_per_block
    a0, a1 = spec.axis_range
    glands = []
    for k, bseq in enumerate(block_seqs):
        br, bc = divmod(k, n_bc)
        rng = np.random.default_rng(bseq)
        r0, c0 = br * spec.block, bc * spec.block
        bh = min(spec.block, spec.height - r0)
        bw = min(spec.block, spec.width - c0)
        n = int(rng.integers(lo, hi + 1))
        frac = bh * bw / spec.block ** 2
        if frac < 1.0:
            expected = n * frac
            n = int(np.floor(expected) + (rng.random() < expected - np.floor(expected)))
        for _ in range(n):
            cy = r0 + rng.random() * bh
            cx = c0 + rng.random() * bw
            a, b = rng.uniform(a0, a1, size=2)
            theta = rng.uniform(0.0, np.pi)
            glands.append(Gland((float(cy), float(cx)), (float(a), float(b)), float(theta), (br, bc)))
    return glands


def rasterize_glands(glands: list[Gland], dims: tuple[int, int]) -> np.ndarray:
    gland = np.zeros(dims, dtype=np.bool_)
    if glands:
        params = np.array([[g.center[0], g.center[1], g.semi_axes[0], g.semi_axes[1], g.angle] for g in glands])
        _kernels.fill_ellipses(gland, params)
    return gland


def _majority_smooth(labels: np.ndarray, gland: np.ndarray) -> np.ndarray:
    padded = np.pad(labels, 1, mode="edge")
    h, w = labels.shape
    votes = np.zeros((h, w), dtype=np.int32)
    for dr in range(3):
        for dc in range(3):
            votes += padded[dr:dr + h, dc:dc + w] == STROMA
    out = np.where(votes >= 5, STROMA, BACKGROUND).astype(labels.dtype)
    out[gland] = GLAND
    return out


def synthesize_mask(spec: MaskSpec, *, return_glands: bool = False):
    """Synthesize a one-hot component mask from ``spec``.

    Ellipses are unioned into one gland region; every remaining pixel is drawn
    independently as stroma or background.
    """
    glands = place_glands(spec)
    gland = rasterize_glands(glands, (spec.height, spec.width))
    fill_rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(1)[0])
    u = fill_rng.random((spec.height, spec.width))
    labels = np.where(u < spec.stroma_prob, STROMA, BACKGROUND).astype(np.int8)
    labels[gland] = GLAND
    if spec.smooth:
        labels = _majority_smooth(labels, gland)
    mask = labels_to_mask(labels)
    return (mask, glands) if return_glands else mask


def mask_class_stats(mask: np.ndarray) -> tuple[float, float, float]:
    """Per-class pixel fractions ``(gland, stroma, background)``, padding excluded."""
    labels = mask_to_labels(mask)
    counts = np.bincount(labels[labels >= 0].ravel(), minlength=3).astype(np.float64)
    total = counts.sum()
    if total == 0:
        return (0.0, 0.0, 0.0)
    return tuple(float(x) for x in counts / total)
