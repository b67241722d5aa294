"""Full-region super-resolution via overlapped tiles with seamless blending.

Tiles are laid out on a stride of patch_size * (1 - overlap), with the last
row/column flush against the region border. Each tile gets a separable
weight window that is 1 in its core and tapers linearly across overlap
margins (no taper on region borders); the per-pixel windows are then
renormalized so the weights of the tiles covering any pixel sum to exactly 1.
Constant per-tile predictions therefore stitch with zero seam.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .model import AFN
from .raster_io import (
    DEFAULT_NORM_SCALE,
    AerialPatch,
    DemGrid,
    PatchTriple,
    flush_anchors,
    normalize_triple,
)
from .synthetic import hillshade


@dataclass
class TilePlan:
    patch_size: int
    overlap_fraction: float
    anchors: list[tuple[int, int]]  # (row, col) tile origins
    weights: list[np.ndarray]  # per-tile windows, normalized to partition of unity
    region_shape: tuple[int, int]

    def weight_sum(self) -> np.ndarray:
        """Accumulated blend weight per region pixel (should be identically 1)."""
        total = np.zeros(self.region_shape)
        for (r, c), w in zip(self.anchors, self.weights):
            total[r : r + self.patch_size, c : c + self.patch_size] += w
        return total


def _taper_profile(patch: int, margin: int, taper_start: bool, taper_end: bool) -> np.ndarray:
    """1-D window: linear pixel-center ramp over the overlap margin."""
    w = np.ones(patch)
    if margin > 0:
        ramp = (np.arange(margin) + 0.5) / margin
        if taper_start:
            w[:margin] = ramp
        if taper_end:
            w[patch - margin :] = ramp[::-1]
    return w


def plan_tiles(
    rows: int,
    cols: int,
    patch_size: int = 200,
    overlap_fraction: float = 0.25,
) -> TilePlan:
    """Tile layout plus partition-of-unity blend weights for a region."""
    if not 0.0 <= overlap_fraction < 0.5:
        raise ValueError(f"overlap_fraction must lie in [0, 0.5), got {overlap_fraction}")
    if rows < patch_size or cols < patch_size:
        raise ValueError(f"region {rows}x{cols} smaller than patch size {patch_size}")
    stride = max(1, int(round(patch_size * (1.0 - overlap_fraction))))
    margin = patch_size - stride

    row_anchors = flush_anchors(rows, patch_size, stride)
    col_anchors = flush_anchors(cols, patch_size, stride)

    anchors: list[tuple[int, int]] = []
    raw: list[np.ndarray] = []
    for r in row_anchors:
        pr = _taper_profile(patch_size, margin, taper_start=r > 0, taper_end=r + patch_size < rows)
        for c in col_anchors:
            pc = _taper_profile(patch_size, margin, taper_start=c > 0, taper_end=c + patch_size < cols)
            anchors.append((r, c))
            raw.append(np.outer(pr, pc))

    total = np.zeros((rows, cols))
    for (r, c), w in zip(anchors, raw):
        total[r : r + patch_size, c : c + patch_size] += w
    if not (total > 0).all():
        raise AssertionError("tile windows leave uncovered pixels")
    weights = [
        w / total[r : r + patch_size, c : c + patch_size] for (r, c), w in zip(anchors, raw)
    ]
    return TilePlan(
        patch_size=patch_size,
        overlap_fraction=overlap_fraction,
        anchors=anchors,
        weights=weights,
        region_shape=(rows, cols),
    )


def predict_patch(
    model: AFN,
    triple: PatchTriple,
    norm_scale: float = DEFAULT_NORM_SCALE,
) -> DemGrid:
    """Super-resolve one raw patch triple: normalize, forward, denormalize.

    Tensors follow the model's parameter dtype (float32 for trained models,
    float64 when exactness matters).
    """
    dtype = next(model.parameters()).dtype
    norm = normalize_triple(triple, norm_scale)
    dem = torch.from_numpy(norm.dem_ilr.heights[None]).to(dtype)
    aerial = torch.from_numpy(np.ascontiguousarray(norm.aerial.pixels.transpose(2, 0, 1))).to(dtype)
    model.eval()
    with torch.no_grad():
        out = model(dem, aerial)
    sr = out.sr_steps[-1][0].numpy().astype(np.float64) * norm.norm_scale + norm.norm_offset
    return DemGrid(sr, triple.hr.cell_size)


def predict_region(
    model: AFN,
    dem_ilr_region: DemGrid,
    aerial_region: AerialPatch,
    plan: TilePlan | None = None,
    norm_scale: float = DEFAULT_NORM_SCALE,
    overlap_fraction: float = 0.25,
    patch_size: int = 200,
) -> DemGrid:
    """Overlapped tiled prediction over a full region.

    Each tile is normalized against its own ILR mean (matching training),
    super-resolved, denormalized, and blended with the plan's weights.
    """
    if (aerial_region.rows, aerial_region.cols) != (2 * dem_ilr_region.rows, 2 * dem_ilr_region.cols):
        raise ValueError("aerial region dims must be double the DEM region dims")
    if plan is None:
        plan = plan_tiles(dem_ilr_region.rows, dem_ilr_region.cols, patch_size, overlap_fraction)
    if plan.region_shape != (dem_ilr_region.rows, dem_ilr_region.cols):
        raise ValueError(f"plan built for {plan.region_shape}, region is "
                         f"{(dem_ilr_region.rows, dem_ilr_region.cols)}")

    model.eval()
    size = plan.patch_size
    out = np.zeros(plan.region_shape)
    for (r, c), weight in zip(plan.anchors, plan.weights):
        ilr_tile = DemGrid(dem_ilr_region.heights[r : r + size, c : c + size].copy(),
                           dem_ilr_region.cell_size)
        aerial_tile = AerialPatch(
            aerial_region.pixels[2 * r : 2 * (r + size), 2 * c : 2 * (c + size)].copy()
        )
        # hr is unused for prediction; the triple just carries shapes/metadata
        triple = PatchTriple(ilr_tile, ilr_tile, aerial_tile)
        pred = predict_patch(model, triple, norm_scale)
        out[r : r + size, c : c + size] += weight * pred.heights
    return DemGrid(out, dem_ilr_region.cell_size)


def save_hillshade_png(grid: DemGrid, path: str | Path, azimuth: float = 315.0, altitude: float = 45.0) -> None:
    """8-bit grayscale hillshade render for visual inspection."""
    shade = hillshade(grid.heights, grid.cell_size, azimuth, altitude)
    Image.fromarray(np.floor(shade * 255.0 + 0.5).astype(np.uint8), mode="L").save(path, format="PNG")
