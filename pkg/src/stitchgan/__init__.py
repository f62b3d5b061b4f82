"""Mask-conditioned tile synthesis by stitching overlapping generator patches."""
from .geometry import (BACKGROUND, GLAND, PAPER_GEOMETRY, STROMA, TINY_GEOMETRY, TOY_GEOMETRY, PatchGrid,
                       TileGeometry, decode_mask, encode_mask, extract_patches, pad_mask, plan_grid, stitch,
                       stitch_tensor)
from .maskgen import MaskSpec, synthesize_mask
from .nets import (PRESETS, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec, ModelParameters,
                   init_params, load_checkpoint, save_checkpoint)
from .training import TrainingConfig, TrainingSample, train, train_step
from .inference import generate_streaming, generate_tile
from .evaluation import dice, frechet_distance, seam_report
from .resources import count_network_gflops, patches_needed, total_gflops
from .data import make_toy_dataset

__version__ = "0.1.0"
