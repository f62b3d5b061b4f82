"""Patch-grid planning, context-padded mask windows and overlap-averaged stitching.

Conventions used across the package:

* A component mask is a float32 array of shape ``(H, W, 3)`` holding a one-hot
  vector per pixel in class order ``(gland, stroma, background)``. Padding
  pixels are all-zero.
* A tile is a float32 array of shape ``(H, W, 3)`` with values in ``[-1, 1]``.
* Torch-side tensors are channel-first (``N, C, H, W``).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import torch

from . import _kernels

GLAND, STROMA, BACKGROUND = 0, 1, 2
CLASS_NAMES = ("gland", "stroma", "background")

# RGB colour per class, in class order.
CLASS_COLORS = np.array([[0, 255, 0], [255, 0, 0], [0, 0, 255]], dtype=np.uint8)


@dataclass(frozen=True)
class TileGeometry:
    """Output patch side, context margin and overlap, all in pixels."""

    patch_out: int
    context: int
    overlap: int

    def __post_init__(self):
        if self.patch_out < 1:
            raise ValueError(f"patch_out must be positive, got {self.patch_out}")
        if self.context < 0:
            raise ValueError(f"context must be >= 0, got {self.context}")
        if not 0 <= self.overlap < self.patch_out:
            raise ValueError(
                f"overlap must satisfy 0 <= overlap < patch_out, got {self.overlap} vs {self.patch_out}")

    @property
    def stride(self) -> int:
        return self.patch_out - self.overlap

    @property
    def patch_in(self) -> int:
        return self.patch_out + 2 * self.context


PAPER_GEOMETRY = TileGeometry(patch_out=256, context=20, overlap=20)
TOY_GEOMETRY = TileGeometry(patch_out=64, context=8, overlap=8)
TINY_GEOMETRY = TileGeometry(patch_out=8, context=2, overlap=2)


@dataclass(frozen=True)
class PatchGrid:
    row_origins: tuple[int, ...]
    col_origins: tuple[int, ...]
    target_dims: tuple[int, int]
    patch_out: int

    @property
    def rows(self) -> int:
        return len(self.row_origins)

    @property
    def cols(self) -> int:
        return len(self.col_origins)

    def __len__(self) -> int:
        return self.rows * self.cols

    @property
    def origins(self) -> list[tuple[int, int]]:
        """Output-patch top-left corners in row-major order."""
        return [(r, c) for r in self.row_origins for c in self.col_origins]

    @cached_property
    def coverage(self) -> np.ndarray:
        """Number of patches covering each target pixel, shape ``(H, W)``."""
        p = self.patch_out
        rows = np.zeros(self.target_dims[0], dtype=np.int32)
        cols = np.zeros(self.target_dims[1], dtype=np.int32)
        for r in self.row_origins:
            rows[r:r + p] += 1
        for c in self.col_origins:
            cols[c:c + p] += 1
        return rows[:, None] * cols[None, :]

    def overlap_intervals(self, axis: int) -> list[tuple[int, int]]:
        """Half-open pixel intervals shared by consecutive patches along ``axis``."""
        origins = self.row_origins if axis == 0 else self.col_origins
        return [(b, a + self.patch_out) for a, b in zip(origins, origins[1:]) if b < a + self.patch_out]


def _axis_origins(n: int, p: int, stride: int) -> tuple[int, ...]:
    origins = list(range(0, n - p + 1, stride))
    if origins[-1] != n - p:
        # far-edge alignment: the last patch overlaps its neighbour by more than V
        origins.append(n - p)
    return tuple(origins)


def plan_grid(mask_dims: tuple[int, int], geom: TileGeometry) -> PatchGrid:
    h, w = (int(d) for d in mask_dims)
    p = geom.patch_out
    if h < p or w < p:
        raise ValueError(f"mask dims {(h, w)} are smaller than the output patch side {p}")
    return PatchGrid(
        row_origins=_axis_origins(h, p, geom.stride),
        col_origins=_axis_origins(w, p, geom.stride),
        target_dims=(h, w),
        patch_out=p,
    )


def pad_mask(mask: np.ndarray, context: int) -> np.ndarray:
    """Zero-pad a component mask by ``context`` pixels on every side."""
    if context < 0:
        raise ValueError("context must be >= 0")
    if context == 0:
        return mask.copy()
    return np.pad(mask, ((context, context), (context, context), (0, 0)))


def extract_mask_patch(padded: np.ndarray, origin: tuple[int, int], geom: TileGeometry) -> np.ndarray:
    """Window ``[origin - C, origin + P + C)`` (tile space) of a padded mask."""
    r, c = origin
    side = geom.patch_in
    if r < 0 or c < 0 or r + side > padded.shape[0] or c + side > padded.shape[1]:
        raise IndexError(f"origin {origin} puts a {side}px window outside padded dims {padded.shape[:2]}")
    return padded[r:r + side, c:c + side]


def read_mask_window(mask: np.ndarray, origin: tuple[int, int], geom: TileGeometry,
                     out: np.ndarray | None = None) -> np.ndarray:
    """Same pixels as ``extract_mask_patch(pad_mask(mask, C), origin, geom)`` without a padded copy."""
    h, w = mask.shape[:2]
    side, ctx = geom.patch_in, geom.context
    r, c = origin
    if r < 0 or c < 0 or r + geom.patch_out > h or c + geom.patch_out > w:
        raise IndexError(f"origin {origin} outside mask dims {(h, w)}")
    if out is None:
        out = np.zeros((side, side, mask.shape[2]), dtype=mask.dtype)
    else:
        out[...] = 0
    r0, c0 = r - ctx, c - ctx
    sr0, sc0 = max(r0, 0), max(c0, 0)
    sr1, sc1 = min(r0 + side, h), min(c0 + side, w)
    out[sr0 - r0:sr1 - r0, sc0 - c0:sc1 - c0] = mask[sr0:sr1, sc0:sc1]
    return out


def extract_patches(tile: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Cut ``P x P`` output-aligned patches from a tile, shape ``(N, P, P, C)``."""
    p = grid.patch_out
    return np.stack([tile[r:r + p, c:c + p] for r, c in grid.origins])


def feather_weight(patch_out: int, overlap: int) -> np.ndarray:
    """Separable linear ramp over the overlap margin, strictly positive."""
    ramp = np.ones(patch_out, dtype=np.float64)
    if overlap > 0:
        idx = np.arange(patch_out)
        ramp = np.minimum(1.0, np.minimum(idx + 1, patch_out - idx) / (overlap + 1))
    return np.outer(ramp, ramp)


def stitch(patches: np.ndarray, grid: PatchGrid, *, feather: int | None = None) -> np.ndarray:
    """Average overlapping ``P x P x C`` patches into a ``H x W x C`` tile.

    Patches are accumulated in row-major grid order into a value-sum buffer and
    a coverage buffer, then divided. ``feather`` (an overlap width) swaps the
    uniform weights for linear ramps.
    """
    patches = np.asarray(patches)
    p = grid.patch_out
    if patches.ndim != 4 or patches.shape[0] != len(grid) or patches.shape[1:3] != (p, p):
        raise ValueError(f"expected {len(grid)} patches of shape ({p}, {p}, C), got {patches.shape}")
    dtype = np.result_type(patches.dtype, np.float32)
    h, w = grid.target_dims
    canvas = np.zeros((h, w, patches.shape[3]), dtype=dtype)
    count = np.zeros((h, w), dtype=dtype)
    weight = (np.ones((p, p)) if feather is None else feather_weight(p, feather)).astype(dtype)
    for k, (r, c) in enumerate(grid.origins):
        _kernels.accumulate_patch(canvas, count, np.ascontiguousarray(patches[k], dtype=dtype), weight, r, c)
    return _kernels.normalize(canvas, count, canvas)


def stitch_tensor(patches: torch.Tensor, grid: PatchGrid, *, feather: int | None = None) -> torch.Tensor:
    """Differentiable stitch: ``(N, C, P, P)`` patches to a ``(C, H, W)`` tile."""
    p = grid.patch_out
    if patches.dim() != 4 or patches.shape[0] != len(grid) or tuple(patches.shape[2:]) != (p, p):
        raise ValueError(f"expected {len(grid)} patches of shape (C, {p}, {p}), got {tuple(patches.shape)}")
    h, w = grid.target_dims
    if feather is None:
        weight = None
        count = torch.from_numpy(grid.coverage).to(patches.dtype)
    else:
        weight = torch.from_numpy(feather_weight(p, feather)).to(patches.dtype)
        total = np.zeros((h, w))
        for r, c in grid.origins:
            total[r:r + p, c:c + p] += feather_weight(p, feather)
        count = torch.from_numpy(total).to(patches.dtype)
    canvas = patches.new_zeros((patches.shape[1], h, w))
    for k, (r, c) in enumerate(grid.origins):
        contrib = patches[k] if weight is None else patches[k] * weight
        canvas[:, r:r + p, c:c + p] += contrib
    return canvas / count


# ---------------------------------------------------------------------------
# RGB encoding of component masks
# ---------------------------------------------------------------------------

def labels_to_mask(labels: np.ndarray) -> np.ndarray:
    """Integer labels (``-1`` for padding) to a one-hot ``(H, W, 3)`` mask."""
    mask = np.zeros(labels.shape + (3,), dtype=np.float32)
    for k in range(3):
        mask[..., k] = labels == k
    return mask


def mask_to_labels(mask: np.ndarray) -> np.ndarray:
    labels = np.argmax(mask, axis=-1).astype(np.int8)
    labels[mask.sum(axis=-1) == 0] = -1
    return labels


def encode_mask(mask: np.ndarray) -> np.ndarray:
    """One-hot mask to 8-bit RGB; padding pixels become black."""
    labels = mask_to_labels(mask)
    rgb = np.zeros(labels.shape + (3,), dtype=np.uint8)
    valid = labels >= 0
    rgb[valid] = CLASS_COLORS[labels[valid]]
    return rgb


def decode_mask(rgb: np.ndarray, max_distance: float = 96.0, max_bad_fraction: float = 0.01) -> np.ndarray:
    """Quantize an RGB raster to the class palette (black means padding).

    Raises ``ValueError`` when more than ``max_bad_fraction`` of the pixels lie
    farther than ``max_distance`` (Euclidean, 8-bit units) from every palette
    colour.
    """
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] < 3:
        raise ValueError(f"expected an RGB raster, got shape {rgb.shape}")
    palette = np.vstack([CLASS_COLORS, [[0, 0, 0]]]).astype(np.float64)
    idx, dist = _kernels.nearest_palette(np.ascontiguousarray(rgb[:, :, :3]), palette)
    bad = float(np.mean(dist > max_distance))
    if bad > max_bad_fraction:
        raise ValueError(f"{bad:.2%} of mask pixels are farther than {max_distance} from any class colour")
    idx[idx == 3] = -1
    return labels_to_mask(idx)
