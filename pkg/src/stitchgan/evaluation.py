"""Frechet distance, Dice, Sobel seam analysis, junction crops and a small segmentation harness."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import _kernels
from .geometry import GLAND, PatchGrid, mask_to_labels
from .nets import GeneratorSpec, UNet

LUMA = np.array([0.299, 0.587, 0.114])


# ---------------------------------------------------------------------------
# Frechet distance
# ---------------------------------------------------------------------------

@dataclass
class FeatureSet:
    n: int
    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def from_features(cls, feats: np.ndarray) -> "FeatureSet":
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 2:
            raise ValueError(f"need at least 2 feature vectors, got shape {feats.shape}")
        return cls(feats.shape[0], feats.mean(axis=0), np.cov(feats, rowvar=False).reshape(feats.shape[1], -1))


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def frechet_distance(a: FeatureSet, b: FeatureSet, eps: float = 1e-6) -> float:
    """``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))`` for Gaussian fits.

    The trace of the product root is taken as ``Tr((A^1/2 B A^1/2)^1/2)``, which
    is symmetric so ``eigh`` applies; negative eigenvalues from round-off are
    clipped and ``eps`` is added to both diagonals.
    """
    if a.dim != b.dim:
        raise ValueError(f"feature dims differ: {a.dim} vs {b.dim}")
    eye = np.eye(a.dim)
    sa, sb = a.cov + eps * eye, b.cov + eps * eye
    for name, s in (("A", sa), ("B", sb)):
        lo = np.linalg.eigvalsh((s + s.T) / 2).min()
        if lo < -1e-8 * max(1.0, np.abs(s).max()):
            raise ValueError(f"covariance {name} is not positive semidefinite (min eigenvalue {lo:.3g})")
    root_a = _sqrt_psd(sa)
    mid = root_a @ sb @ root_a
    tr_cross = np.sqrt(np.clip(np.linalg.eigvalsh((mid + mid.T) / 2), 0, None)).sum()
    diff = a.mean - b.mean
    return float(max(diff @ diff + np.trace(sa) + np.trace(sb) - 2.0 * tr_cross, 0.0))


class RandomProjectionExtractor:
    """Deterministic stand-in for a pretrained feature network.

    Images are flattened and multiplied by a fixed Gaussian matrix (one per input
    shape, seeded), scaled so feature variance does not grow with image size.
    """

    def __init__(self, dim: int = 32, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._mats: dict[tuple, np.ndarray] = {}

    def _matrix(self, shape) -> np.ndarray:
        if shape not in self._mats:
            size = int(np.prod(shape))
            rng = np.random.default_rng([self.seed, size])
            self._mats[shape] = rng.normal(0.0, 1.0 / np.sqrt(size), size=(size, self.dim))
        return self._mats[shape]

    def __call__(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        return image.reshape(-1) @ self._matrix(image.shape)


def extract_features(images, extractor) -> FeatureSet:
    images = list(images)
    if not images:
        raise ValueError("no images to extract features from")
    return FeatureSet.from_features(np.stack([np.asarray(extractor(im), dtype=np.float64) for im in images]))


# ---------------------------------------------------------------------------
# Dice
# ---------------------------------------------------------------------------

def dice(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def gland_binary(mask: np.ndarray) -> np.ndarray:
    return mask_to_labels(mask) == GLAND


# ---------------------------------------------------------------------------
# seams
# ---------------------------------------------------------------------------

def sobel_magnitude(tile: np.ndarray) -> np.ndarray:
    """Classical 3x3 Sobel gradient magnitude of the luminance, edge-replicated."""
    tile = np.asarray(tile, dtype=np.float64)
    gray = tile @ LUMA if tile.ndim == 3 else tile
    return _kernels.sobel_magnitude(np.ascontiguousarray(gray))


@dataclass
class SeamReport:
    band_mean: float
    control_mean: float
    ratio: float
    bands: list[dict] = field(default_factory=list)
    reference_ratio: float | None = None

    @property
    def anomaly_ratio(self) -> float:
        """Raw ratio, or the ratio relative to a reference tile when one was given."""
        if self.reference_ratio is None:
            return self.ratio
        return _safe_ratio(self.ratio, self.reference_ratio)


def _safe_ratio(num: float, den: float) -> float:
    if den == 0:
        return 1.0 if num == 0 else float("inf")
    return num / den


def _bands(grid: PatchGrid, axis: int) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """(overlap band, control band) pairs along one axis."""
    out = []
    prev_end = 0
    for s, e in grid.overlap_intervals(axis):
        width = e - s
        m = (prev_end + s) // 2
        c0 = min(max(m - width // 2, 0), grid.target_dims[axis] - width)
        out.append(((s, e), (c0, c0 + width)))
        prev_end = e
    return out


def _band_stats(mag: np.ndarray, grid: PatchGrid):
    band_sum = band_n = ctrl_sum = ctrl_n = 0.0
    detail = []
    for axis in (0, 1):
        for (s, e), (c0, c1) in _bands(grid, axis):
            band = mag[s:e] if axis == 0 else mag[:, s:e]
            ctrl = mag[c0:c1] if axis == 0 else mag[:, c0:c1]
            band_sum += band.sum()
            band_n += band.size
            ctrl_sum += ctrl.sum()
            ctrl_n += ctrl.size
            detail.append({"axis": axis, "band": (s, e), "control": (c0, c1),
                           "band_mean": float(band.mean()), "control_mean": float(ctrl.mean())})
    if band_n == 0:
        raise ValueError("grid has no overlap bands (overlap = 0)")
    return band_sum / band_n, ctrl_sum / ctrl_n, detail


def seam_report(tile: np.ndarray, grid: PatchGrid, reference: np.ndarray | None = None) -> SeamReport:
    """Sobel energy inside patch-overlap bands versus equal-width interior bands.

    Bands run the full tile length across each junction; each control band is
    centred in the non-overlap span before its junction. With ``reference`` the
    anomaly ratio is reported relative to the same statistic on the reference.
    """
    if tuple(tile.shape[:2]) != tuple(grid.target_dims):
        raise ValueError(f"tile dims {tile.shape[:2]} do not match grid {grid.target_dims}")
    band_mean, ctrl_mean, detail = _band_stats(sobel_magnitude(tile), grid)
    report = SeamReport(float(band_mean), float(ctrl_mean), _safe_ratio(band_mean, ctrl_mean), detail)
    if reference is not None:
        rb, rc, _ = _band_stats(sobel_magnitude(reference), grid)
        report.reference_ratio = _safe_ratio(rb, rc)
    return report


def junction_lines(grid: PatchGrid) -> list[tuple[int, int]]:
    """(axis, position) of each junction line: the centre of each overlap band."""
    return [(axis, (s + e) // 2) for axis in (0, 1) for s, e in grid.overlap_intervals(axis)]


def sample_overlap_patches(tiles, grid: PatchGrid, size: int = 76, count: int = 5000, seed: int = 0,
                           return_centers: bool = False):
    """Square crops centred on junction lines.

    Each sample picks a tile, then a junction line, both uniformly, then a
    position along the line uniformly among positions where the crop fits.
    """
    tiles = list(tiles)
    h, w = grid.target_dims
    if size > min(h, w):
        raise ValueError(f"crop size {size} exceeds tile dims {(h, w)}")
    half = size // 2
    lines = [(axis, pos) for axis, pos in junction_lines(grid)
             if pos - half >= 0 and pos - half + size <= (h if axis == 0 else w)]
    if count > 0 and (not lines or not tiles):
        raise ValueError("no junction line admits a crop of this size")
    rng = np.random.default_rng(seed)
    crops = np.empty((count, size, size) + tiles[0].shape[2:] if tiles else (0, size, size), dtype=np.float32)
    centers = []
    for k in range(count):
        t = tiles[rng.integers(len(tiles))]
        axis, pos = lines[rng.integers(len(lines))]
        along = rng.integers(half, (w if axis == 0 else h) - size + half + 1)
        cy, cx = (pos, along) if axis == 0 else (along, pos)
        crops[k] = t[cy - half:cy - half + size, cx - half:cx - half + size]
        centers.append((int(cy), int(cx)))
    return (crops, centers) if return_centers else crops


# ---------------------------------------------------------------------------
# segmentation harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SegmenterSpec:
    side: int = 64
    depth: int = 3
    base_channels: int = 8
    steps: int = 300
    learning_rate: float = 2e-3
    seed: int = 0

    def unet_spec(self) -> GeneratorSpec:
        return GeneratorSpec(input_side=self.side, output_side=self.side, depth=self.depth,
                             base_channels=self.base_channels, out_channels=1)


def _seg_tensors(pairs):
    imgs = np.stack([np.asarray(im, dtype=np.float32) for im, _ in pairs]).transpose(0, 3, 1, 2)
    masks = np.stack([np.asarray(m, dtype=np.float32) for _, m in pairs])[:, None]
    return torch.from_numpy(np.ascontiguousarray(imgs)), torch.from_numpy(masks)


class Segmenter:
    """U-Net with a one-logit head, trained with per-pixel BCE on full images."""

    def __init__(self, spec: SegmenterSpec):
        self.spec = spec
        torch.manual_seed(spec.seed)
        self.net = UNet(spec.unet_spec(), final_activation=None)

    def fit(self, pairs) -> list[float]:
        pairs = list(pairs)
        if not pairs:
            raise ValueError("no training pairs")
        x, y = _seg_tensors(pairs)
        opt = torch.optim.Adam(self.net.parameters(), lr=self.spec.learning_rate)
        gen = torch.Generator().manual_seed(self.spec.seed)
        losses = []
        self.net.train()
        for _ in range(self.spec.steps):
            idx = torch.randint(len(pairs), (min(4, len(pairs)),), generator=gen)
            loss = F.binary_cross_entropy_with_logits(self.net(x[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        return losses

    def predict(self, images) -> np.ndarray:
        x = torch.from_numpy(np.ascontiguousarray(np.stack(images).transpose(0, 3, 1, 2), dtype=np.float32))
        self.net.eval()
        with torch.no_grad():
            return (self.net(x)[:, 0] > 0).numpy()


def segmentation_harness(train_pairs, test_pairs, spec: SegmenterSpec = SegmenterSpec()) -> dict:
    """Train on (image, binary gland mask) pairs and report Dice on the test pairs."""
    train_pairs, test_pairs = list(train_pairs), list(test_pairs)
    if not train_pairs or not test_pairs:
        raise ValueError("train and test pairs must be nonempty")
    model = Segmenter(spec)
    losses = model.fit(train_pairs)
    preds = model.predict([im for im, _ in test_pairs])
    scores = [dice(p, m) for p, (_, m) in zip(preds, test_pairs)]
    return {"mean": float(np.mean(scores)), "std": float(np.std(scores)), "n": len(scores),
            "scores": scores, "final_loss": losses[-1]}


def train_test_matrix(real_train, synth_train, real_test, synth_test,
                      spec: SegmenterSpec = SegmenterSpec()) -> dict:
    """Dice for every (train source, test source) combination of real and synthetic data."""
    out = {}
    for tr_name, tr in (("real", real_train), ("synthetic", synth_train)):
        model = Segmenter(spec)
        model.fit(tr)
        for te_name, te in (("real", real_test), ("synthetic", synth_test)):
            preds = model.predict([im for im, _ in te])
            scores = [dice(p, m) for p, (_, m) in zip(preds, te)]
            out[(tr_name, te_name)] = {"mean": float(np.mean(scores)), "std": float(np.std(scores))}
    return out
