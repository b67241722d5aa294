"""Deterministic synthetic terrain: multi-octave value noise plus hillshade.

Stands in for the proprietary alpine dataset at desk scale: heightfields are
sums of bicubically-interpolated random lattices at doubling frequencies, and
the paired "aerial" image is a Lambertian hillshade of the height gradient
pushed through a fixed terrain colormap at twice the DEM resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .raster_io import (
    AerialPatch,
    DatasetManifest,
    DemGrid,
    ManifestEntry,
    PatchTriple,
    make_lr_ilr,
    save_aerial,
    save_dem,
    save_manifest,
)
from .resample import resample_values


@dataclass
class SynthConfig:
    seed: int = 0
    size: int = 200
    octaves: int = 6
    base_amplitude: float = 120.0
    persistence: float = 0.55
    base_height: float = 0.0
    cell_size: float = 2.0
    lr_cell_size: float = 15.0
    sun_azimuth: float = 315.0  # degrees clockwise from north
    sun_altitude: float = 45.0  # degrees above the horizon

    def __post_init__(self) -> None:
        if self.octaves < 1:
            raise ValueError("octaves must be >= 1")
        if not 0.0 < self.persistence < 1.0:
            raise ValueError("persistence must lie in (0, 1)")
        if not 0.0 < self.sun_altitude <= 90.0:
            raise ValueError("sun_altitude must lie in (0, 90]")
        if self.size < 16:
            raise ValueError("size must be >= 16")


def _octave_field(seed: int, octave: int, size: int) -> np.ndarray:
    """One smooth noise layer: a random lattice at frequency 2**octave,
    bicubically interpolated up to the full patch size."""
    nodes = 2**octave + 1
    rng = np.random.default_rng([seed, octave, 0x7E44])
    lattice = rng.uniform(-1.0, 1.0, size=(nodes, nodes))
    if nodes == size:
        return lattice
    return resample_values(lattice, size, size)


def gen_dem(cfg: SynthConfig) -> DemGrid:
    """Deterministic multi-octave value-noise heightfield."""
    heights = np.full((cfg.size, cfg.size), cfg.base_height, dtype=np.float64)
    for octave in range(cfg.octaves):
        amplitude = cfg.base_amplitude * cfg.persistence**octave
        if amplitude == 0.0:
            continue
        heights += amplitude * _octave_field(cfg.seed, octave, cfg.size)
    return DemGrid(heights, cfg.cell_size)


def hillshade(heights: np.ndarray, cell_size: float, azimuth_deg: float, altitude_deg: float) -> np.ndarray:
    """Lambertian shading of a heightfield in [0, 1].

    Azimuth is clockwise from north; row 0 is the northern edge.
    """
    dz_drow, dz_dcol = np.gradient(np.asarray(heights, dtype=np.float64), cell_size)
    # rows grow southward, so the northward slope is -dz_drow
    nx, ny = -dz_dcol, dz_drow
    norm = np.sqrt(nx * nx + ny * ny + 1.0)
    az = math.radians(azimuth_deg)
    alt = math.radians(altitude_deg)
    sx = math.cos(alt) * math.sin(az)
    sy = math.cos(alt) * math.cos(az)
    sz = math.sin(alt)
    shade = (nx * sx + ny * sy + sz) / norm
    return np.clip(shade, 0.0, 1.0)


# Shade-indexed terrain colormap: shadowed slopes stay dark earth, lit slopes
# read as pale rock. Stops at shade 0, 0.5, 1.
_COLOR_STOPS = np.array(
    [
        [0.10, 0.11, 0.08],
        [0.45, 0.42, 0.30],
        [0.96, 0.94, 0.88],
    ]
)


def _apply_colormap(shade: np.ndarray) -> np.ndarray:
    shade = np.clip(shade, 0.0, 1.0)
    pos = shade * (len(_COLOR_STOPS) - 1)
    low = np.floor(pos).astype(int)
    high = np.minimum(low + 1, len(_COLOR_STOPS) - 1)
    frac = (pos - low)[..., None]
    return (1.0 - frac) * _COLOR_STOPS[low] + frac * _COLOR_STOPS[high]


def gen_aerial(dem: DemGrid, cfg: SynthConfig) -> AerialPatch:
    """Pseudo-aerial image: hillshade upsampled 2x, mapped to RGB, quantized."""
    shade = hillshade(dem.heights, dem.cell_size, cfg.sun_azimuth, cfg.sun_altitude)
    shade2x = np.clip(resample_values(shade, 2 * dem.rows, 2 * dem.cols), 0.0, 1.0)
    rgb = _apply_colormap(shade2x)
    return AerialPatch(np.floor(rgb * 255.0 + 0.5).astype(np.uint8))


def gen_triple(cfg: SynthConfig) -> PatchTriple:
    """One full synthetic training sample."""
    hr = gen_dem(cfg)
    aerial = gen_aerial(hr, cfg)
    _, dem_ilr = make_lr_ilr(hr, cfg.lr_cell_size)
    return PatchTriple(hr, dem_ilr, aerial)


def _split_counts(n: int) -> tuple[int, int, int]:
    """60/20/20 split with at least one val and one test patch."""
    val = max(1, int(math.floor(n * 0.2 + 0.5)))
    test = max(1, int(math.floor(n * 0.2 + 0.5)))
    train = n - val - test
    if train < 1:
        raise ValueError(f"n={n} leaves no training patches")
    return train, val, test


def gen_dataset(
    n: int,
    cfg: SynthConfig,
    out_dir: str | Path,
    counts: tuple[int, int, int] | None = None,
) -> DatasetManifest:
    """Generate ``n`` triples on disk plus a JSON manifest.

    Per-patch seeds derive from ``cfg.seed``, so the directory tree is a pure
    function of the arguments. Splits are assigned by a seeded shuffle.
    """
    if n < 3:
        raise ValueError(f"need at least 3 patches for a train/val/test split, got {n}")
    if counts is None:
        counts = _split_counts(n)
    if sum(counts) != n or min(counts) < 1 or counts[0] < 1:
        raise ValueError(f"split counts {counts} incompatible with n={n}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    order = np.random.default_rng(cfg.seed).permutation(n)
    split_of = {}
    n_train, n_val, _ = counts
    for rank, idx in enumerate(order):
        split_of[int(idx)] = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")

    entries = []
    for i in range(n):
        patch_seed = int(np.random.SeedSequence([cfg.seed, i]).generate_state(1)[0])
        patch_cfg = replace(cfg, seed=patch_seed)
        hr = gen_dem(patch_cfg)
        aerial = gen_aerial(hr, patch_cfg)
        lr, dem_ilr = make_lr_ilr(hr, cfg.lr_cell_size)

        pid = f"patch_{i:04d}"
        paths = {
            "hr": f"{pid}_hr.demf32",
            "lr": f"{pid}_lr.demf32",
            "dem_ilr": f"{pid}_ilr.demf32",
            "aerial": f"{pid}_aerial.png",
        }
        save_dem(hr, out_dir / paths["hr"])
        save_dem(lr, out_dir / paths["lr"])
        save_dem(dem_ilr, out_dir / paths["dem_ilr"])
        save_aerial(aerial, out_dir / paths["aerial"])
        entries.append(ManifestEntry(patch_id=pid, split=split_of[i], paths=paths))

    manifest = DatasetManifest(
        entries=entries, seed=cfg.seed, patch_size=cfg.size, cell_size=cfg.cell_size, base_dir=out_dir
    )
    save_manifest(manifest, out_dir / "manifest.json")
    return manifest
