"""Compute and memory cost model: patch counts, GFlops/Mult-Adds and training RAM.

Units follow the convention ``2 GFlops = 1 G Mult-Adds``; both are always
reported. Parameters and activations are counted at 4 bytes (float32).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

from .geometry import TileGeometry, plan_grid
from .nets import ConvLayer, DiscriminatorSpec, GeneratorSpec, discriminator_layers, generator_layers

PER_PATCH_GFLOPS = 56.25
BYTES_PER_VALUE = 4


@dataclass
class ResourceEstimate:
    width: int
    height: int
    stride: int
    per_patch_gflops: float
    n_patches: float
    total_gflops: float
    mult_adds: float
    exact_patches: int | None = None
    train_ram_bytes: int | None = None

    def as_dict(self) -> dict:
        d = asdict(self)
        d["mult_adds_unit"] = "G Mult-Adds (2 GFlops = 1 Mult-Add)"
        d["bytes_per_value"] = BYTES_PER_VALUE
        return d


def patches_needed(m: float, n: float, stride: float, *, exact_geometry: TileGeometry | None = None) -> float:
    """``M * N / S**2``; with ``exact_geometry`` the true grid size from ``plan_grid`` instead."""
    if stride <= 0:
        raise ValueError("stride must be positive")
    if m <= 0 or n <= 0:
        raise ValueError("image dims must be positive")
    if exact_geometry is not None:
        return len(plan_grid((int(m), int(n)), exact_geometry))
    return m * n / stride ** 2


def total_gflops(m: float, n: float, stride: float, per_patch_gflops: float = PER_PATCH_GFLOPS) -> float:
    return patches_needed(m, n, stride) * per_patch_gflops


def mult_adds(gflops: float) -> float:
    return gflops / 2.0


def layer_macs(layer: ConvLayer) -> int:
    """Multiply-accumulates of one layer, counting taps that land on padding.

    A convolution does ``k*k*c_in`` MACs per output element; a transposed
    convolution scatters ``k*k*c_out`` MACs from every input element.
    """
    k2 = layer.kernel ** 2
    if layer.kind == "conv":
        return layer.out_side ** 2 * layer.out_channels * layer.in_channels * k2
    return layer.in_side ** 2 * layer.in_channels * layer.out_channels * k2


def _layers(spec) -> list[ConvLayer]:
    if isinstance(spec, GeneratorSpec):
        return generator_layers(spec)
    if isinstance(spec, DiscriminatorSpec):
        return discriminator_layers(spec)
    return list(spec)


def count_network_gflops(spec: GeneratorSpec | DiscriminatorSpec | Sequence[ConvLayer]) -> float:
    """Forward GFlops (``2 x MACs / 1e9``) of the conv/deconv layers of one forward pass."""
    return 2 * sum(layer_macs(layer) for layer in _layers(spec)) / 1e9


def count_parameters(spec) -> int:
    return sum(layer.n_params for layer in _layers(spec))


def activation_values(spec) -> int:
    """Output elements of every conv layer plus the network input, batch of one."""
    layers = _layers(spec)
    if not layers:
        return 0
    first = layers[0]
    return first.in_channels * first.in_side ** 2 + sum(l.out_channels * l.out_side ** 2 for l in layers)


def estimate_train_ram(gen_spec, disc_spec, geom: TileGeometry | None = None, tile_side: int | None = None) -> int:
    """Bytes for parameters plus one forward and backward pass of G and D.

    Generator activations are stored once per patch of a tile; the discriminator
    sees the whole tile once. The backward pass is assumed to hold one gradient
    per stored activation, doubling the activation term.
    """
    if tile_side is None:
        tile_side = disc_spec.input_side if isinstance(disc_spec, DiscriminatorSpec) else None
    n_patches = len(plan_grid((tile_side, tile_side), geom)) if geom is not None and tile_side else 1
    params = count_parameters(gen_spec) + count_parameters(disc_spec)
    acts = activation_values(gen_spec) * n_patches + activation_values(disc_spec)
    return BYTES_PER_VALUE * (params + 2 * acts)


def estimate(width: int, height: int, stride: int, per_patch_gflops: float = PER_PATCH_GFLOPS,
             geom: TileGeometry | None = None, gen_spec=None, disc_spec=None) -> ResourceEstimate:
    n = patches_needed(width, height, stride)
    total = n * per_patch_gflops
    est = ResourceEstimate(width, height, stride, per_patch_gflops, n, total, mult_adds(total))
    if geom is not None and min(width, height) >= geom.patch_out:
        est.exact_patches = int(patches_needed(width, height, stride, exact_geometry=geom))
    if gen_spec is not None and disc_spec is not None:
        est.train_ram_bytes = estimate_train_ram(gen_spec, disc_spec, geom)
    return est
