"""Patch-wise generation of arbitrarily large tiles, in memory or as a row-band stream."""
from __future__ import annotations

import tracemalloc
from dataclasses import dataclass

import numpy as np
import torch

from . import _kernels
from .geometry import TileGeometry, plan_grid, read_mask_window
from .nets import Generator, ModelParameters


def _as_generator(model) -> Generator:
    return model.generator if isinstance(model, ModelParameters) else model


class ActivationMeter:
    """Forward hooks summing the bytes of every leaf-module output in one forward pass."""

    def __init__(self, module: torch.nn.Module):
        self.current = 0
        self.peak = 0
        self._handles = [m.register_forward_hook(self._hook) for m in module.modules()
                         if not list(m.children())]

    def _hook(self, module, inputs, output):
        self.current += output.numel() * output.element_size()

    def start(self):
        self.current = 0

    def stop(self):
        self.peak = max(self.peak, self.current)

    def close(self):
        for h in self._handles:
            h.remove()


def _run_patches(gen: Generator, windows: np.ndarray, meter: ActivationMeter | None) -> np.ndarray:
    dtype = next(gen.parameters()).dtype
    x = torch.from_numpy(windows.transpose(0, 3, 1, 2)).to(dtype)
    if meter is not None:
        meter.start()
    with torch.no_grad():
        y = gen(x)
    if meter is not None:
        meter.stop()
    return np.ascontiguousarray(y.permute(0, 2, 3, 1).numpy(), dtype=np.float32)


def generate_tile(model, mask: np.ndarray, geom: TileGeometry, *, batch_size: int = 1,
                  order=None, canvas: np.ndarray | None = None, count: np.ndarray | None = None,
                  meter: ActivationMeter | None = None) -> np.ndarray:
    """Generate a tile with the same dims as ``mask``.

    Mask windows are read straight from the unpadded mask (zero-filled at the
    border) so transient memory is a handful of patches whatever the mask size.
    ``canvas``/``count`` may be preallocated by the caller. ``order`` permutes
    the patch visiting order for testing.
    """
    gen = _as_generator(model)
    if geom.patch_in != gen.spec.input_side or geom.patch_out != gen.spec.output_side:
        raise ValueError(f"geometry {geom} does not match generator spec {gen.spec}")
    grid = plan_grid(mask.shape[:2], geom)
    h, w = grid.target_dims
    if canvas is None:
        canvas = np.zeros((h, w, 3), dtype=np.float32)
    if count is None:
        count = np.zeros((h, w), dtype=np.float32)
    weight = np.ones((geom.patch_out, geom.patch_out), dtype=np.float32)
    window = np.zeros((batch_size, geom.patch_in, geom.patch_in, mask.shape[2]), dtype=np.float32)
    origins = grid.origins
    if order is not None:
        origins = [origins[i] for i in order]
    was_training = gen.training
    gen.eval()
    try:
        for start in range(0, len(origins), batch_size):
            chunk = origins[start:start + batch_size]
            for k, o in enumerate(chunk):
                read_mask_window(mask, o, geom, out=window[k])
            out = _run_patches(gen, window[:len(chunk)], meter)
            for k, (r, c) in enumerate(chunk):
                _kernels.accumulate_patch(canvas, count, out[k], weight, r, c)
    finally:
        gen.train(was_training)
    return _kernels.normalize(canvas, count, canvas)


def measure_generate_memory(model, mask: np.ndarray, geom: TileGeometry, batch_size: int = 1) -> dict:
    """Peak transient bytes of ``generate_tile``, output canvas and coverage buffer excluded.

    Host allocations are traced with ``tracemalloc`` (numpy reports to it); torch
    activations are summed per forward with module hooks.
    """
    gen = _as_generator(model)
    h, w = mask.shape[:2]
    canvas = np.zeros((h, w, 3), dtype=np.float32)
    count = np.zeros((h, w), dtype=np.float32)
    meter = ActivationMeter(gen)
    tracemalloc.start()
    try:
        tracemalloc.reset_peak()
        generate_tile(gen, mask, geom, batch_size=batch_size, canvas=canvas, count=count, meter=meter)
        _, host_peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
        meter.close()
    return {"host_peak_bytes": host_peak, "activation_peak_bytes": meter.peak,
            "transient_peak_bytes": host_peak + meter.peak, "output_bytes": canvas.nbytes + count.nbytes}


# ---------------------------------------------------------------------------
# streaming
# ---------------------------------------------------------------------------

def iter_padded_bands(mask: np.ndarray, context: int, band_rows: int):
    """Yield consecutive row-bands of the zero-padded mask, ``band_rows`` rows each."""
    h, w, ch = mask.shape
    total = h + 2 * context
    for r0 in range(0, total, band_rows):
        r1 = min(r0 + band_rows, total)
        band = np.zeros((r1 - r0, w + 2 * context, ch), dtype=mask.dtype)
        s0, s1 = max(r0 - context, 0), min(r1 - context, h)
        if s1 > s0:
            band[s0 + context - r0:s1 + context - r0, context:context + w] = mask[s0:s1]
        yield band


@dataclass
class StreamStats:
    mask_bands_high_water: int = 0
    patch_rows_high_water: int = 0
    buffer_rows_high_water: int = 0
    bands_emitted: int = 0


def generate_streaming(model, mask_source, geom: TileGeometry, sink, dims: tuple[int, int], *,
                       batch_size: int = 1) -> StreamStats:
    """Stream a tile row-band by row-band.

    ``mask_source`` yields row-bands of the padded mask top to bottom (any band
    height); ``dims`` is the unpadded ``(H, W)``. ``sink`` is called with each
    finished band of output rows ``(rows, W, 3)`` in order. Produces exactly the
    pixels of ``generate_tile``.
    """
    gen = _as_generator(model)
    grid = plan_grid(dims, geom)
    h, w = dims
    p, side = geom.patch_out, geom.patch_in
    source = iter(mask_source)
    stats = StreamStats()

    bands: list[tuple[int, np.ndarray]] = []   # (first padded row, band)
    next_row = 0

    def ensure_rows(stop: int):
        nonlocal next_row
        while next_row < stop:
            try:
                band = next(source)
            except StopIteration:
                raise ValueError(f"mask source ended at padded row {next_row}, needed {stop}") from None
            if band.ndim != 3 or band.shape[1] != w + 2 * geom.context or band.shape[0] == 0:
                raise ValueError(f"bad mask band shape {band.shape}")
            bands.append((next_row, band))
            next_row += band.shape[0]
        stats.mask_bands_high_water = max(stats.mask_bands_high_water, len(bands))

    def window(r: int, c: int, out: np.ndarray):
        # padded rows [r, r + side), padded cols [c, c + side)
        for b0, band in bands:
            lo, hi = max(r, b0), min(r + side, b0 + band.shape[0])
            if hi > lo:
                out[lo - r:hi - r] = band[lo - b0:hi - b0, c:c + side]

    acc = np.zeros((p, w, 3), dtype=np.float32)
    cnt = np.zeros((p, w), dtype=np.float32)
    acc_top = 0           # tile row held at acc[0]
    holders: list[int] = []  # patch-row origins still contributing to held rows
    weight = np.ones((p, p), dtype=np.float32)
    win = np.zeros((batch_size, side, side, 3), dtype=np.float32)

    def emit(upto: int):
        nonlocal acc_top
        n = upto - acc_top
        if n <= 0:
            return
        out = _kernels.normalize(acc[:n].copy(), cnt[:n].copy(), np.empty((n, w, 3), dtype=np.float32))
        sink(out)
        stats.bands_emitted += 1
        acc[:p - n] = acc[n:].copy()
        cnt[:p - n] = cnt[n:].copy()
        acc[p - n:] = 0
        cnt[p - n:] = 0
        acc_top = upto

    was_training = gen.training
    gen.eval()
    try:
        for r in grid.row_origins:
            emit(r)
            holders[:] = [o for o in holders if o + p > acc_top]
            holders.append(r)
            stats.patch_rows_high_water = max(stats.patch_rows_high_water, len(holders))
            ensure_rows(r + side)
            bands[:] = [(b0, b) for b0, b in bands if b0 + b.shape[0] > r]
            cols = grid.col_origins
            for start in range(0, len(cols), batch_size):
                chunk = cols[start:start + batch_size]
                for k, c in enumerate(chunk):
                    window(r, c, win[k])
                out = _run_patches(gen, win[:len(chunk)], None)
                for k, c in enumerate(chunk):
                    _kernels.accumulate_patch(acc, cnt, out[k], weight, r - acc_top, c)
            stats.buffer_rows_high_water = max(stats.buffer_rows_high_water,
                                               sum(b.shape[0] for _, b in bands))
        emit(h)
    finally:
        gen.train(was_training)
    return stats
