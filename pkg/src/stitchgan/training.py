"""Adversarial training with gradients flowing through the stitched tile."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .geometry import (PatchGrid, TileGeometry, extract_mask_patch, extract_patches, pad_mask, plan_grid,
                       stitch_tensor)
from .nets import ModelParameters, discriminator_forward, save_checkpoint

log = logging.getLogger(__name__)

SCORE_EPS = 1e-7
METRIC_FIELDS = ("step", "L_R", "L_adv_D", "L_adv_G", "D_real", "D_fake")


@dataclass
class TrainingConfig:
    lambda_r: float = 1.0
    lambda_adv: float = 100.0
    learning_rate: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    epochs: int = 100
    seed: int = 0
    checkpoint_every: int = 0
    disc_level: str = "tile"

    def __post_init__(self):
        if self.lambda_r < 0 or self.lambda_adv < 0 or (self.lambda_r == 0 and self.lambda_adv == 0):
            raise ValueError("lambda_r and lambda_adv must be >= 0 and not both zero")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.disc_level not in ("tile", "patch"):
            raise ValueError(f"disc_level must be 'tile' or 'patch', got {self.disc_level!r}")

    @classmethod
    def from_file(cls, path, **overrides) -> "TrainingConfig":
        """Read flat ``key = value`` lines (``#`` comments); non-None ``overrides`` win."""
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key, val = key.strip(), val.strip().strip("'\"")
            if not sep or key not in types:
                raise ValueError(f"{path}:{lineno}: expected a known 'key = value', got {raw!r}")
            values[key] = _coerce(val, types[key])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def _coerce(text: str, type_name: str):
    if type_name == "int":
        return int(text)
    if type_name == "float":
        return float(text)
    return text


@dataclass
class TrainingSample:
    mask: np.ndarray   # (H, W, 3) one-hot
    image: np.ndarray  # (H, W, 3) in [-1, 1]

    def __post_init__(self):
        if self.mask.shape != self.image.shape:
            raise ValueError(f"mask {self.mask.shape} and image {self.image.shape} dims differ")
        if self.image.size and (self.image.min() < -1 or self.image.max() > 1):
            raise ValueError("image values must lie in [-1, 1]")


@dataclass
class StepMetrics:
    step: int
    L_R: float
    L_adv_D: float
    L_adv_G: float
    D_real: float
    D_fake: float


def reconstruction_loss(y, y_hat):
    """Mean absolute difference over all pixels and channels."""
    if tuple(y.shape) != tuple(y_hat.shape):
        raise ValueError(f"tile shapes differ: {tuple(y.shape)} vs {tuple(y_hat.shape)}")
    if isinstance(y, torch.Tensor) or isinstance(y_hat, torch.Tensor):
        return (torch.as_tensor(y) - torch.as_tensor(y_hat)).abs().mean()
    return float(np.mean(np.abs(np.asarray(y, dtype=np.float64) - np.asarray(y_hat, dtype=np.float64))))


def adversarial_loss(d_real, d_fake):
    """Return ``(disc_term, gen_term)`` from scalar realism scores in (0, 1).

    ``disc_term = -[log D_real + log(1 - D_fake)]`` is minimised by the
    discriminator; ``gen_term = -log D_fake`` is the non-saturating generator
    loss. Scores are clamped to ``[eps, 1 - eps]`` before the logs.
    """
    tensor = isinstance(d_real, torch.Tensor) or isinstance(d_fake, torch.Tensor)
    lib = torch if tensor else np
    d_real = torch.as_tensor(d_real) if tensor else np.asarray(d_real, dtype=np.float64)
    d_fake = torch.as_tensor(d_fake) if tensor else np.asarray(d_fake, dtype=np.float64)
    for name, s in (("D_real", d_real), ("D_fake", d_fake)):
        bad = ~lib.isfinite(s) | (s < 0) | (s > 1)
        if bool(bad.any()):
            raise ValueError(f"{name} score outside [0, 1]: {s}")
    d_real = lib.clip(d_real, SCORE_EPS, 1 - SCORE_EPS)
    d_fake = lib.clip(d_fake, SCORE_EPS, 1 - SCORE_EPS)
    disc_term = -(lib.log(d_real) + lib.log(1 - d_fake))
    gen_term = -lib.log(d_fake)
    if not tensor:
        return float(disc_term), float(gen_term)
    return disc_term, gen_term


def generator_adversarial_term(d_fake):
    """Non-saturating generator term ``-log D_fake`` (clamped like ``adversarial_loss``)."""
    if isinstance(d_fake, torch.Tensor):
        return -torch.log(d_fake.clamp(SCORE_EPS, 1 - SCORE_EPS))
    return float(-np.log(np.clip(np.asarray(d_fake, dtype=np.float64), SCORE_EPS, 1 - SCORE_EPS)))


def total_objective(l_r, l_adv_gen, config: TrainingConfig):
    return config.lambda_r * l_r + config.lambda_adv * l_adv_gen


# ---------------------------------------------------------------------------
# tensors for one tile
# ---------------------------------------------------------------------------

def _chw(a: np.ndarray, dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(a.transpose(2, 0, 1))).to(dtype)


@dataclass
class TileBatch:
    """Torch views of one training sample laid out for a step."""

    grid: PatchGrid
    mask_patches: torch.Tensor   # (N, 3, P+2C, P+2C)
    mask_tile: torch.Tensor      # (1, 3, H, W)
    image_tile: torch.Tensor     # (1, 3, H, W)
    mask_crops: torch.Tensor     # (N, 3, P, P), output-aligned, for patch-level D
    image_crops: torch.Tensor    # (N, 3, P, P)

    @classmethod
    def from_sample(cls, sample: TrainingSample, geom: TileGeometry, dtype=torch.float32) -> "TileBatch":
        grid = plan_grid(sample.mask.shape[:2], geom)
        padded = pad_mask(sample.mask, geom.context)
        mp = np.stack([extract_mask_patch(padded, o, geom) for o in grid.origins])
        return cls(
            grid=grid,
            mask_patches=torch.from_numpy(np.ascontiguousarray(mp.transpose(0, 3, 1, 2))).to(dtype),
            mask_tile=_chw(sample.mask, dtype)[None],
            image_tile=_chw(sample.image, dtype)[None],
            mask_crops=torch.from_numpy(
                np.ascontiguousarray(extract_patches(sample.mask, grid).transpose(0, 3, 1, 2))).to(dtype),
            image_crops=torch.from_numpy(
                np.ascontiguousarray(extract_patches(sample.image, grid).transpose(0, 3, 1, 2))).to(dtype),
        )


def generate_stitched(params: ModelParameters, batch: TileBatch) -> tuple[torch.Tensor, torch.Tensor]:
    """All generator patches for a tile and their differentiable stitch ``(1, 3, H, W)``."""
    patches = params.generator(batch.mask_patches)
    return patches, stitch_tensor(patches, batch.grid)[None]


def generator_objective(params: ModelParameters, batch: TileBatch, config: TrainingConfig):
    """Generator-side objective for one tile; returns ``(objective, L_R, gen_term, D_fake)``."""
    patches, fake = generate_stitched(params, batch)
    if config.disc_level == "tile":
        l_r = reconstruction_loss(batch.image_tile, fake)
        _, d_fake = discriminator_forward(params.discriminator, batch.mask_tile, fake)
    else:
        l_r = reconstruction_loss(batch.image_crops, patches)
        _, d_fake = discriminator_forward(params.discriminator, batch.mask_crops, patches)
    d_fake = d_fake.mean()
    gen_term = generator_adversarial_term(d_fake)
    return total_objective(l_r, gen_term, config), l_r, gen_term, d_fake


def make_optimizers(params: ModelParameters, config: TrainingConfig):
    betas = (config.beta1, config.beta2)
    return (torch.optim.Adam(params.generator.parameters(), lr=config.learning_rate, betas=betas),
            torch.optim.Adam(params.discriminator.parameters(), lr=config.learning_rate, betas=betas))


def _check_finite(**values):
    values = {k: v.detach() if isinstance(v, torch.Tensor) else v for k, v in values.items()}
    for name, v in values.items():
        if not math.isfinite(float(v)):
            raise FloatingPointError(f"non-finite {name} = {float(v)}; values: "
                                     + ", ".join(f"{k}={float(x):.6g}" for k, x in values.items()))


def train_step(params: ModelParameters, sample, geom: TileGeometry, config: TrainingConfig,
               optimizers, step: int = 0) -> StepMetrics:
    """One discriminator update followed by one generator update on a single tile.

    ``sample`` may be a ``TrainingSample`` or a prebuilt ``TileBatch``. Parameters
    and optimizer state are updated in place.
    """
    batch = sample if isinstance(sample, TileBatch) else TileBatch.from_sample(sample, geom)
    opt_g, opt_d = optimizers
    params.train()
    disc = params.discriminator

    # discriminator half-step on a detached fake
    with torch.no_grad():
        patches, fake = generate_stitched(params, batch)
    if config.disc_level == "tile":
        _, d_real = discriminator_forward(disc, batch.mask_tile, batch.image_tile)
        _, d_fake = discriminator_forward(disc, batch.mask_tile, fake)
    else:
        _, d_real = discriminator_forward(disc, batch.mask_crops, batch.image_crops)
        _, d_fake = discriminator_forward(disc, batch.mask_crops, patches)
    d_real, d_fake = d_real.mean(), d_fake.mean()
    disc_term, _ = adversarial_loss(d_real, d_fake)
    _check_finite(L_adv_D=disc_term, D_real=d_real, D_fake=d_fake)
    opt_d.zero_grad(set_to_none=True)
    disc_term.backward()
    opt_d.step()

    # generator half-step; D is held fixed
    for p in disc.parameters():
        p.requires_grad_(False)
    try:
        objective, l_r, gen_term, d_fake_g = generator_objective(params, batch, config)
        _check_finite(objective=objective, L_R=l_r, L_adv_G=gen_term)
        opt_g.zero_grad(set_to_none=True)
        objective.backward()
        opt_g.step()
    finally:
        for p in disc.parameters():
            p.requires_grad_(True)

    vals = (l_r, disc_term, gen_term, d_real, d_fake)
    return StepMetrics(step, *(float(v.detach()) if isinstance(v, torch.Tensor) else float(v) for v in vals))


@dataclass
class TrainResult:
    params: ModelParameters
    metrics: list[StepMetrics] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def write_metrics_csv(path, metrics) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        for m in metrics:
            writer.writerow(asdict(m))


def train(dataset, geom: TileGeometry, config: TrainingConfig, params: ModelParameters, *,
          log_path=None, checkpoint_dir=None, max_steps: int | None = None, callback=None) -> TrainResult:
    """Run ``epochs * len(dataset)`` steps, visiting samples in a seeded order per epoch."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("training dataset is empty")
    torch.manual_seed(config.seed)
    batches = [TileBatch.from_sample(s, geom) for s in dataset]
    optimizers = make_optimizers(params, config)
    rng = np.random.default_rng(config.seed)
    result = TrainResult(params)
    log_fh = writer = None
    if log_path is not None:
        log_fh = open(log_path, "w", newline="")
        writer = csv.DictWriter(log_fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    step = 0
    try:
        for epoch in range(config.epochs):
            for idx in rng.permutation(len(batches)):
                if max_steps is not None and step >= max_steps:
                    return result
                m = train_step(params, batches[idx], geom, config, optimizers, step=step)
                result.metrics.append(m)
                if writer is not None:
                    writer.writerow(asdict(m))
                if callback is not None:
                    callback(m)
                step += 1
            if result.metrics:
                log.info("epoch %d step %d L_R=%.4f D_real=%.3f D_fake=%.3f", epoch, step,
                         result.metrics[-1].L_R, result.metrics[-1].D_real, result.metrics[-1].D_fake)
            if checkpoint_dir is not None and config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
                path = Path(checkpoint_dir) / f"epoch{epoch + 1:04d}.pt"
                save_checkpoint(path, params, epoch=epoch + 1, step=step, config=asdict(config))
                result.checkpoints.append(path)
    finally:
        if log_fh is not None:
            log_fh.close()
    return result
