"""Command-line entry point: ``stitchgan <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every subcommand takes
``--seed`` and ``--config``; the config file holds flat ``key = value`` lines
whose keys are option names (``lambda_adv``, ``tile_side`` ...) and flags given
on the command line win. ``STITCHGAN_CONFIG`` names a default config file.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

CONFIG_ENV = "STITCHGAN_CONFIG"

log = logging.getLogger("stitchgan")


def _read_flat(path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        values[key.strip().replace("-", "_")] = val.strip().strip("'\"")
    return values


def _apply_config(args, defaults: dict) -> None:
    """Fill options left at None from the config file, then from ``defaults``."""
    path = args.config or os.environ.get(CONFIG_ENV)
    values = _read_flat(path) if path else {}
    for key, default in defaults.items():
        if getattr(args, key, None) is not None:
            continue
        if key in values:
            kind = type(default) if default is not None else str
            raw = values[key]
            val = raw.lower() in ("1", "true", "yes") if kind is bool else kind(raw)
            setattr(args, key, val)
        else:
            setattr(args, key, default)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth_mask(args) -> int:
    from .data import write_mask
    from .maskgen import MaskSpec, mask_class_stats, synthesize_mask

    spec = MaskSpec(args.height, args.width, stroma_prob=args.stroma_prob,
                    background_prob=round(1.0 - args.stroma_prob, 12), seed=args.seed)
    mask = synthesize_mask(spec)
    write_mask(args.out, mask)
    print(json.dumps({"out": str(args.out), "dims": [args.height, args.width], "seed": args.seed,
                      "class_fractions": dict(zip(("gland", "stroma", "background"), mask_class_stats(mask)))}))
    return 0


def cmd_toy_data(args) -> int:
    from .data import make_toy_dataset, write_mask, write_tile
    from .geometry import TileGeometry

    geom = TileGeometry(args.patch, args.context, args.overlap)
    out = Path(args.out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    samples = make_toy_dataset(args.n, geom, seed=args.seed, tile_side=args.tile_side or None)
    for k, s in enumerate(samples):
        write_tile(out / "images" / f"toy{k:04d}.png", s.image)
        write_mask(out / "masks" / f"toy{k:04d}.png", s.mask)
    print(json.dumps({"out_dir": str(out), "n": len(samples), "seed": args.seed}))
    return 0


def cmd_extract_tiles(args) -> int:
    from .data import extract_tiles, load_pair, write_mask, write_tile

    sample = load_pair(args.image, args.mask)
    tiles = extract_tiles(sample.image, sample.mask, args.tile_side, args.stride)
    out = Path(args.out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    for k, t in enumerate(tiles):
        write_tile(out / "images" / f"{stem}_{k:04d}.png", t.image)
        write_mask(out / "masks" / f"{stem}_{k:04d}.png", t.mask)
    print(json.dumps({"out_dir": str(out), "tiles": len(tiles)}))
    return 0


def cmd_train(args) -> int:
    import torch

    from .data import discover_pairs, load_pair
    from .geometry import TileGeometry
    from .nets import PRESETS, init_params, save_checkpoint
    from .training import TrainingConfig, train

    pairs = discover_pairs(args.data)
    if not pairs:
        raise ValueError(f"no image/mask pairs under {args.data}")
    dataset = [load_pair(i, m) for i, m in pairs]
    gen_spec, disc_spec = PRESETS[args.preset]
    geom = TileGeometry(gen_spec.output_side, gen_spec.context, args.overlap)
    side = geom.patch_out if args.disc_level == "patch" else dataset[0].mask.shape[0]
    if disc_spec.input_side != side:
        disc_spec = disc_spec.resized(side)
    config = TrainingConfig(lambda_r=args.lambda_r, lambda_adv=args.lambda_adv, learning_rate=args.learning_rate,
                            beta1=args.beta1, epochs=args.epochs, seed=args.seed,
                            checkpoint_every=args.checkpoint_every, disc_level=args.disc_level)
    torch.manual_seed(args.seed)
    params = init_params(gen_spec, disc_spec, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = train(dataset, geom, config, params, log_path=out / "metrics.csv",
                   checkpoint_dir=out / "checkpoints", max_steps=args.max_steps or None)
    final = out / "final.pt"
    save_checkpoint(final, params, overlap=geom.overlap, steps=len(result.metrics))
    last = result.metrics[-1] if result.metrics else None
    print(json.dumps({"checkpoint": str(final), "steps": len(result.metrics),
                      "final_L_R": last.L_R if last else None}))
    return 0


def cmd_generate(args) -> int:
    from .data import read_mask, to_uint8, write_rgb, write_tile
    from .geometry import TileGeometry
    from .inference import generate_streaming, generate_tile, iter_padded_bands
    from .nets import load_checkpoint

    params, extra = load_checkpoint(args.checkpoint)
    spec = params.gen_spec
    overlap = args.overlap if args.overlap is not None else int(extra.get("overlap", spec.context))
    geom = TileGeometry(spec.output_side, spec.context, overlap)
    mask = read_mask(args.mask)
    if args.streaming:
        rows = []
        generate_streaming(params, iter_padded_bands(mask, geom.context, geom.stride), geom,
                           lambda band: rows.append(to_uint8(band)), mask.shape[:2])
        write_rgb(args.out, np.concatenate(rows, axis=0))
    else:
        write_tile(args.out, generate_tile(params, mask, geom))
    print(json.dumps({"out": str(args.out), "dims": list(mask.shape[:2]), "streaming": bool(args.streaming)}))
    return 0


def _image_list(paths) -> list[np.ndarray]:
    from .data import read_rgb, to_unit_range

    files = []
    for p in map(Path, paths):
        files.extend(sorted(p.glob("*.png")) if p.is_dir() else [p])
    return [to_unit_range(read_rgb(f)) for f in files]


def cmd_eval(args) -> int:
    from .data import read_mask
    from .evaluation import (RandomProjectionExtractor, dice, extract_features, frechet_distance,
                             gland_binary, seam_report)
    from .geometry import TileGeometry, plan_grid

    config = {"metric": args.metric, "inputs": args.inputs, "seed": args.seed}
    if args.metric == "fid":
        if len(args.inputs) != 2:
            raise ValueError("fid needs exactly two inputs (real set, generated set)")
        extractor = RandomProjectionExtractor(dim=args.feature_dim, seed=args.seed)
        a = extract_features(_image_list([args.inputs[0]]), extractor)
        b = extract_features(_image_list([args.inputs[1]]), extractor)
        report = {"metric": "fid", "value": frechet_distance(a, b), "n": [a.n, b.n]}
        config["feature_dim"] = args.feature_dim
    elif args.metric == "dice":
        if len(args.inputs) != 2:
            raise ValueError("dice needs exactly two mask files")
        value = dice(gland_binary(read_mask(args.inputs[0])), gland_binary(read_mask(args.inputs[1])))
        report = {"metric": "dice", "value": value, "n": 1}
    else:
        geom = TileGeometry(args.patch, args.context, args.overlap)
        ratios = []
        for tile in _image_list(args.inputs):
            ratios.append(seam_report(tile, plan_grid(tile.shape[:2], geom)).anomaly_ratio)
        report = {"metric": "seam", "value": float(np.median(ratios)), "per_tile": ratios, "n": len(ratios)}
        config.update(patch=args.patch, context=args.context, overlap=args.overlap)
    report["config"] = config
    text = json.dumps(report, indent=2)
    if args.report:
        Path(args.report).write_text(text + "\n")
    print(text)
    return 0


def cmd_estimate(args) -> int:
    from .geometry import TileGeometry
    from .nets import PRESETS
    from .resources import count_network_gflops, estimate

    gen_spec, disc_spec = PRESETS[args.spec]
    geom = TileGeometry(gen_spec.output_side, gen_spec.context, gen_spec.output_side - args.stride) \
        if 0 < args.stride <= gen_spec.output_side else None
    est = estimate(args.width, args.height, args.stride, args.per_patch_gflops, geom=geom,
                   gen_spec=gen_spec, disc_spec=disc_spec)
    if args.format == "json":
        d = est.as_dict()
        d["spec"] = args.spec
        d["spec_generator_gflops_per_patch"] = count_network_gflops(gen_spec)
        print(json.dumps(d, indent=2))
        return 0
    sizes = sorted({512, 1024, 2048, 4096, 8192, max(args.width, args.height)})
    print(f"{'size':>8} {'patches':>10} {'GFlops':>12} {'G Mult-Adds':>12} {'train RAM (GB)':>15}")
    for s in sizes:
        e = estimate(s, s, args.stride, args.per_patch_gflops, geom=geom, gen_spec=gen_spec, disc_spec=disc_spec)
        print(f"{s:>8} {e.n_patches:>10.2f} {e.total_gflops:>12.2f} {e.mult_adds:>12.2f} "
              f"{e.train_ram_bytes / 1e9:>15.3f}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

DEFAULTS = {
    "synth-mask": {"width": 256, "height": 256, "stroma_prob": 0.9, "seed": 0},
    "toy-data": {"n": 5, "patch": 64, "context": 8, "overlap": 8, "tile_side": 0, "seed": 0},
    "extract-tiles": {"tile_side": 728, "stride": 200, "seed": 0},
    "train": {"preset": "toy", "overlap": 8, "lambda_r": 1.0, "lambda_adv": 100.0, "learning_rate": 1e-4,
              "beta1": 0.5, "epochs": 100, "checkpoint_every": 0, "disc_level": "tile", "max_steps": 0,
              "seed": 0},
    "generate": {"seed": 0},
    "eval": {"feature_dim": 32, "patch": 64, "context": 8, "overlap": 8, "seed": 0},
    "estimate": {"stride": 236, "spec": "paper", "per_patch_gflops": 56.25, "format": "json", "seed": 0},
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", default=None, help=f"flat key = value file (default: ${CONFIG_ENV})")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="stitchgan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-mask", parents=[common], help="synthesize a component mask PNG")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--stroma-prob", dest="stroma_prob", type=float)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_mask)

    p = sub.add_parser("toy-data", parents=[common], help="write a toy images/ + masks/ dataset")
    p.add_argument("--n", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--context", type=int)
    p.add_argument("--overlap", type=int)
    p.add_argument("--tile-side", dest="tile_side", type=int)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_toy_data)

    p = sub.add_parser("extract-tiles", parents=[common], help="sliding-window training tiles")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--tile-side", dest="tile_side", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.set_defaults(func=cmd_extract_tiles)

    p = sub.add_parser("train", parents=[common], help="adversarial training on a tile dataset")
    p.add_argument("--data", required=True, help="directory with images/ and masks/ (or manifest.txt)")
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--preset", choices=["toy", "paper", "tiny"])
    p.add_argument("--overlap", type=int)
    p.add_argument("--lambda-r", dest="lambda_r", type=float)
    p.add_argument("--lambda-adv", dest="lambda_adv", type=float)
    p.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--disc-level", dest="disc_level", choices=["tile", "patch"])
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", parents=[common], help="generate a tile from a mask PNG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--overlap", type=int, default=None)
    p.add_argument("--streaming", action="store_true")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", parents=[common], help="fid | dice | seam metrics as JSON")
    p.add_argument("metric", choices=["fid", "dice", "seam"])
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--report")
    p.add_argument("--feature-dim", dest="feature_dim", type=int)
    p.add_argument("--patch", type=int)
    p.add_argument("--context", type=int)
    p.add_argument("--overlap", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("estimate", parents=[common], help="GFlops / Mult-Adds / RAM estimate")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--stride", type=int)
    p.add_argument("--spec", choices=["paper", "toy", "tiny"])
    p.add_argument("--per-patch-gflops", dest="per_patch_gflops", type=float)
    p.add_argument("--format", choices=["json", "table"])
    p.set_defaults(func=cmd_estimate)
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_config(args, DEFAULTS[args.command])
        return args.func(args)
    except (ValueError, OSError, KeyError, FloatingPointError, RuntimeError) as exc:
        print(f"stitchgan {args.command}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
