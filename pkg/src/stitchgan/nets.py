"""U-Net patch generator, tile discriminator, layer plans and checkpoints."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

CHECKPOINT_FORMAT = "stitchgan-checkpoint"
CHECKPOINT_VERSION = 1


def _channels(base: int, level: int, cap: int) -> int:
    return min(base * 2 ** level, cap)


@dataclass(frozen=True)
class GeneratorSpec:
    input_side: int
    output_side: int
    depth: int = 4
    base_channels: int = 16
    max_channels: int = 512
    skip_connections: bool = True
    input_skip: bool = False
    in_channels: int = 3
    out_channels: int = 3

    def __post_init__(self):
        if self.output_side < 1 or self.input_side < self.output_side:
            raise ValueError(f"need input_side >= output_side >= 1, got {self.input_side}, {self.output_side}")
        if (self.input_side - self.output_side) % 2:
            raise ValueError("input_side - output_side must be even (2 x context)")
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if self.padded_side // 2 ** self.depth < 1:
            raise ValueError("bottleneck would be empty")

    @property
    def context(self) -> int:
        return (self.input_side - self.output_side) // 2

    @property
    def padded_side(self) -> int:
        """Input side rounded up to a multiple of ``2**depth``."""
        m = 2 ** self.depth
        return -(-self.input_side // m) * m

    def channels(self, level: int) -> int:
        return _channels(self.base_channels, level, self.max_channels)


@dataclass(frozen=True)
class DiscriminatorSpec:
    input_side: int
    blocks: int = 5
    base_channels: int = 64
    max_channels: int = 512
    input_channels: int = 6
    kernel: int = 4

    def __post_init__(self):
        if self.blocks < 1:
            raise ValueError("blocks must be >= 1")
        if self.map_side < 1:
            raise ValueError(f"{self.blocks} blocks reduce a {self.input_side}px input to nothing")

    def sides(self) -> list[int]:
        out = [self.input_side]
        for _ in range(self.blocks):
            out.append((out[-1] - self.kernel) // 2 + 1)
        return out

    @property
    def map_side(self) -> int:
        return self.sides()[-1]

    def channels(self, level: int) -> int:
        return _channels(self.base_channels, level, self.max_channels)

    def resized(self, input_side: int) -> "DiscriminatorSpec":
        """Same channel layout for another input side, dropping blocks that would leave no map."""
        for blocks in range(self.blocks, 0, -1):
            side = input_side
            for _ in range(blocks):
                side = (side - self.kernel) // 2 + 1
            if side >= 1:
                return replace(self, input_side=input_side, blocks=blocks)
        raise ValueError(f"input side {input_side} is too small for a {self.kernel}px kernel")


# Presets.
PAPER_GENERATOR = GeneratorSpec(input_side=296, output_side=256, depth=6, base_channels=64)
PAPER_DISCRIMINATOR = DiscriminatorSpec(input_side=728, blocks=5, base_channels=64)
TOY_GENERATOR = GeneratorSpec(input_side=80, output_side=64, depth=4, base_channels=16, input_skip=True)
TOY_DISCRIMINATOR = DiscriminatorSpec(input_side=176, blocks=4, base_channels=16)
TINY_GENERATOR = GeneratorSpec(input_side=12, output_side=8, depth=2, base_channels=4)
TINY_DISCRIMINATOR = DiscriminatorSpec(input_side=14, blocks=2, base_channels=4)

PRESETS = {
    "paper": (PAPER_GENERATOR, PAPER_DISCRIMINATOR),
    "toy": (TOY_GENERATOR, TOY_DISCRIMINATOR),
    "tiny": (TINY_GENERATOR, TINY_DISCRIMINATOR),
}


@dataclass(frozen=True)
class ConvLayer:
    """One convolution in a network plan; bias and norm only affect parameter counts."""

    kind: str  # "conv" or "deconv"
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    padding: int
    in_side: int
    bias: bool = True
    norm: bool = False

    @property
    def out_side(self) -> int:
        if self.kind == "conv":
            return (self.in_side + 2 * self.padding - self.kernel) // self.stride + 1
        return (self.in_side - 1) * self.stride - 2 * self.padding + self.kernel

    @property
    def n_params(self) -> int:
        n = self.in_channels * self.out_channels * self.kernel ** 2
        if self.bias:
            n += self.out_channels
        if self.norm:
            n += 2 * self.out_channels
        return n


def norm_layer(channels: int) -> nn.Module:
    # Per-sample statistics with running averages: each patch is normalised as
    # if it went through a batch norm on its own, so patches never share stats.
    return nn.InstanceNorm2d(channels, affine=True, track_running_stats=True)


def generator_layers(spec: GeneratorSpec) -> list[ConvLayer]:
    layers = []
    side = spec.padded_side
    cin = spec.in_channels
    for i in range(spec.depth):
        cout = spec.channels(i)
        norm = 0 < i < spec.depth - 1
        layers.append(ConvLayer("conv", cin, cout, 4, 2, 1, side, bias=not norm, norm=norm))
        side //= 2
        cin = cout
    for j in range(spec.depth - 1, 0, -1):
        cout = spec.channels(j - 1)
        if j < spec.depth - 1 and spec.skip_connections:
            cin *= 2
        layers.append(ConvLayer("deconv", cin, cout, 4, 2, 1, side, bias=False, norm=True))
        side *= 2
        cin = cout
    if spec.skip_connections:
        cin *= 2
    if not spec.input_skip:
        layers.append(ConvLayer("deconv", cin, spec.out_channels, 4, 2, 1, side, bias=True))
        return layers
    # full-resolution head: upsample to features, concatenate the raw input, 3x3 conv
    c0 = spec.channels(0)
    layers.append(ConvLayer("deconv", cin, c0, 4, 2, 1, side, bias=False, norm=True))
    layers.append(ConvLayer("conv", c0 + spec.in_channels, spec.out_channels, 3, 1, 1, side * 2, bias=True))
    return layers


def discriminator_layers(spec: DiscriminatorSpec) -> list[ConvLayer]:
    layers = []
    cin = spec.input_channels
    sides = spec.sides()
    for i in range(spec.blocks):
        cout = spec.channels(i)
        norm = i > 0
        layers.append(ConvLayer("conv", cin, cout, spec.kernel, 2, 0, sides[i], bias=not norm, norm=norm))
        cin = cout
    layers.append(ConvLayer("conv", cin, 1, 1, 1, 0, sides[-1], bias=True))
    return layers


def _make(layer: ConvLayer) -> nn.Module:
    cls = nn.Conv2d if layer.kind == "conv" else nn.ConvTranspose2d
    return cls(layer.in_channels, layer.out_channels, layer.kernel, layer.stride, layer.padding, bias=layer.bias)


class UNet(nn.Module):
    """Encoder/decoder with optional symmetric skips; spatial size is preserved."""

    def __init__(self, spec: GeneratorSpec, final_activation: str | None = "tanh"):
        super().__init__()
        self.spec = spec
        plan = generator_layers(spec)
        depth = spec.depth
        self.down = nn.ModuleList()
        for layer in plan[:depth]:
            mods = [_make(layer)]
            if layer.norm:
                mods.append(norm_layer(layer.out_channels))
            mods.append(nn.LeakyReLU(0.2))
            self.down.append(nn.Sequential(*mods))
        self.up = nn.ModuleList()
        n_up = depth if spec.input_skip else depth - 1
        for layer in plan[depth:depth + n_up]:
            self.up.append(nn.Sequential(_make(layer), norm_layer(layer.out_channels), nn.LeakyReLU(0.2)))
        self.head = _make(plan[-1])
        self.final_activation = final_activation

    def forward(self, x):
        inp = x
        skips = []
        for block in self.down:
            x = block(x)
            skips.append(x)
        skips.pop()
        for block in self.up:
            x = block(x)
            if skips and self.spec.skip_connections:
                x = torch.cat([x, skips.pop()], dim=1)
        if self.spec.input_skip:
            x = torch.cat([x, inp], dim=1)
        x = self.head(x)
        if self.final_activation == "tanh":
            x = torch.tanh(x)
        return x


class Generator(nn.Module):
    """Maps ``(N, 3, P+2C, P+2C)`` mask patches to ``(N, 3, P, P)`` tissue patches."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        self.unet = UNet(spec)

    def forward(self, x):
        spec = self.spec
        if x.dim() != 4 or x.shape[1] != spec.in_channels or x.shape[2] != spec.input_side \
                or x.shape[3] != spec.input_side:
            raise ValueError(
                f"generator expects (N, {spec.in_channels}, {spec.input_side}, {spec.input_side}), "
                f"got {tuple(x.shape)}")
        extra = spec.padded_side - spec.input_side
        lo = extra // 2
        if extra:
            x = F.pad(x, (lo, extra - lo, lo, extra - lo))
        y = self.unet(x)
        a = lo + spec.context
        return y[:, :, a:a + spec.output_side, a:a + spec.output_side]


class Discriminator(nn.Module):
    """Conditional discriminator returning per-location realism logits."""

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        plan = discriminator_layers(spec)
        blocks = []
        for layer in plan[:-1]:
            blocks.append(_make(layer))
            if layer.norm:
                blocks.append(norm_layer(layer.out_channels))
            blocks.append(nn.LeakyReLU(0.2))
        self.body = nn.Sequential(*blocks)
        self.head = _make(plan[-1])

    def forward(self, mask, image):
        if mask.shape != image.shape:
            raise ValueError(f"mask {tuple(mask.shape)} and image {tuple(image.shape)} shapes differ")
        side = self.spec.input_side
        if mask.dim() != 4 or mask.shape[1] + image.shape[1] != self.spec.input_channels \
                or mask.shape[2] != side or mask.shape[3] != side:
            raise ValueError(f"discriminator expects {side}x{side} inputs, got {tuple(mask.shape)}")
        return self.head(self.body(torch.cat([mask, image], dim=1)))


def generator_forward(generator: Generator, mask_patch: torch.Tensor) -> torch.Tensor:
    return generator(mask_patch)


def discriminator_forward(discriminator: Discriminator, mask_tile, image_tile):
    """Return the sigmoid realism map ``(N, 1, m, m)`` and its per-sample mean."""
    realism = torch.sigmoid(discriminator(mask_tile, image_tile))
    return realism, realism.mean(dim=(1, 2, 3))


@dataclass
class ModelParameters:
    generator: Generator
    discriminator: Discriminator
    gen_spec: GeneratorSpec
    disc_spec: DiscriminatorSpec
    seed: int

    def train(self, mode: bool = True):
        self.generator.train(mode)
        self.discriminator.train(mode)
        return self

    def eval(self):
        return self.train(False)


def _init_weights(module: nn.Module, gen: torch.Generator):
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * 0.02)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.InstanceNorm2d):
            with torch.no_grad():
                m.weight.copy_(1.0 + torch.randn(m.weight.shape, generator=gen) * 0.02)
                m.bias.zero_()


def init_params(gen_spec: GeneratorSpec, disc_spec: DiscriminatorSpec, seed: int = 0,
                dtype: torch.dtype = torch.float32) -> ModelParameters:
    if disc_spec.input_channels != gen_spec.in_channels + gen_spec.out_channels:
        raise ValueError(
            f"discriminator takes {disc_spec.input_channels} channels but mask+image is "
            f"{gen_spec.in_channels + gen_spec.out_channels}")
    gen = torch.Generator().manual_seed(seed)
    g = Generator(gen_spec)
    d = Discriminator(disc_spec)
    _init_weights(g, gen)
    _init_weights(d, gen)
    return ModelParameters(g.to(dtype), d.to(dtype), gen_spec, disc_spec, seed)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def save_checkpoint(path, params: ModelParameters, **extra) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "gen_spec": asdict(params.gen_spec),
        "disc_spec": asdict(params.disc_spec),
        "seed": params.seed,
        "generator": params.generator.state_dict(),
        "discriminator": params.discriminator.state_dict(),
        "extra": extra,
    }
    torch.save(payload, Path(path))


def load_checkpoint(path) -> tuple[ModelParameters, dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload["version"] > CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {payload['version']} is newer than supported {CHECKPOINT_VERSION}")
    gen_spec = GeneratorSpec(**payload["gen_spec"])
    disc_spec = DiscriminatorSpec(**payload["disc_spec"])
    dtype = next(t.dtype for t in payload["generator"].values() if t.is_floating_point())
    params = init_params(gen_spec, disc_spec, payload["seed"], dtype=dtype)
    params.generator.load_state_dict(payload["generator"])
    params.discriminator.load_state_dict(payload["discriminator"])
    return params, payload.get("extra", {})
