"""Elevation raster and aerial image I/O, resampling, normalization, patching.

Formats:
  * ``.demf32`` -- 32-byte little-endian header (magic ``DEMF``, version u32,
    rows u32, cols u32, cell_size f64, nodata f64 with NaN meaning "none"),
    followed by rows*cols float32 values, row-major. Round-trips bit-exactly.
  * ESRI-style ASCII grids are accepted on input (ncols / nrows / cellsize /
    NODATA_value header lines, then whitespace-separated values).
  * Aerial imagery is 8-bit RGB PNG at exactly twice the DEM pixel grid.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DemCorruptionError, DemFormatError
from .resample import resample_values, scaled_dims

DEMF32_MAGIC = b"DEMF"
DEMF32_VERSION = 1
_HEADER = struct.Struct("<4sIIIdd")  # magic, version, rows, cols, cell_size, nodata

# Published per-channel statistics of the pretrained image backbone the RGB
# branch is modeled after; aerial pixels are scaled to [0,1] and standardized
# with these before entering the network.
IMAGE_CHANNEL_MEAN = (0.485, 0.456, 0.406)
IMAGE_CHANNEL_STD = (0.229, 0.224, 0.225)

DEFAULT_NORM_SCALE = 100.0  # meters mapped to one normalized height unit


@dataclass
class DemGrid:
    """A 2-D elevation raster in meters with per-pixel size metadata."""

    heights: np.ndarray
    cell_size: float
    nodata_value: float | None = None

    def __post_init__(self) -> None:
        self.heights = np.asarray(self.heights, dtype=np.float64)
        if self.heights.ndim != 2 or self.heights.shape[0] < 1 or self.heights.shape[1] < 1:
            raise ValueError(f"heights must be a non-empty 2-D array, got shape {self.heights.shape}")
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        if not np.all(np.isfinite(self.valid_values())):
            raise ValueError("heights contain non-finite values outside the nodata mask")

    @property
    def rows(self) -> int:
        return self.heights.shape[0]

    @property
    def cols(self) -> int:
        return self.heights.shape[1]

    def nodata_mask(self) -> np.ndarray:
        if self.nodata_value is None:
            return np.zeros(self.heights.shape, dtype=bool)
        return self.heights == self.nodata_value

    def valid_values(self) -> np.ndarray:
        return self.heights[~self.nodata_mask()]


@dataclass
class AerialPatch:
    """An RGB raster geo-registered to a DEM patch at twice its resolution.

    Raw imagery is uint8 in [0, 255]; normalized imagery is float.
    """

    pixels: np.ndarray  # (rows, cols, 3)

    def __post_init__(self) -> None:
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"pixels must have shape (rows, cols, 3), got {self.pixels.shape}")

    @property
    def rows(self) -> int:
        return self.pixels.shape[0]

    @property
    def cols(self) -> int:
        return self.pixels.shape[1]


@dataclass
class PatchTriple:
    """One training sample: HR target, bicubically upsampled LR input, aerial image.

    ``norm_offset``/``norm_scale`` record the height normalization applied to
    the grids (offset 0, scale 1 means raw meters).
    """

    hr: DemGrid
    dem_ilr: DemGrid
    aerial: AerialPatch
    norm_offset: float = 0.0
    norm_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.hr.heights.shape != self.dem_ilr.heights.shape:
            raise ValueError("hr and dem_ilr must share one shape")
        if self.hr.cell_size != self.dem_ilr.cell_size:
            raise ValueError("hr and dem_ilr must share one cell size")
        if (self.aerial.rows, self.aerial.cols) != (2 * self.hr.rows, 2 * self.hr.cols):
            raise ValueError(
                f"aerial must be exactly double the DEM patch: "
                f"{self.aerial.rows}x{self.aerial.cols} vs {self.hr.rows}x{self.hr.cols} DEM"
            )
        if not self.norm_scale > 0:
            raise ValueError("norm_scale must be positive")


@dataclass
class ManifestEntry:
    patch_id: str
    split: str  # train | val | test
    paths: dict[str, str]  # keys: hr, lr, dem_ilr, aerial (relative to manifest dir)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    seed: int
    patch_size: int
    cell_size: float
    base_dir: Path | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        ids = [e.patch_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate patch ids in manifest")

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def counts(self) -> dict[str, int]:
        out = {"train": 0, "val": 0, "test": 0}
        for e in self.entries:
            out[e.split] = out.get(e.split, 0) + 1
        return out

    def resolve(self, entry: ManifestEntry, key: str) -> Path:
        base = self.base_dir if self.base_dir is not None else Path(".")
        return Path(base) / entry.paths[key]


# ---------------------------------------------------------------------------
# DEM file formats
# ---------------------------------------------------------------------------


def save_dem(grid: DemGrid, path: str | Path) -> None:
    """Write a grid in the binary ``.demf32`` format."""
    nodata = float("nan") if grid.nodata_value is None else float(grid.nodata_value)
    header = _HEADER.pack(DEMF32_MAGIC, DEMF32_VERSION, grid.rows, grid.cols, grid.cell_size, nodata)
    payload = grid.heights.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_dem(path: str | Path) -> DemGrid:
    """Read a ``.demf32`` or ESRI-style ASCII grid."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head == DEMF32_MAGIC:
            rest = fh.read(_HEADER.size - 4)
            if len(rest) != _HEADER.size - 4:
                raise DemCorruptionError(f"{path}: truncated header")
            _, version, rows, cols, cell_size, nodata = _HEADER.unpack(head + rest)
            if version != DEMF32_VERSION:
                raise DemFormatError(f"{path}: unsupported demf32 version {version}")
            if rows < 1 or cols < 1 or not cell_size > 0:
                raise DemFormatError(f"{path}: invalid header fields rows={rows} cols={cols} cell={cell_size}")
            payload = fh.read()
            expected = rows * cols * 4
            if len(payload) != expected:
                raise DemCorruptionError(
                    f"{path}: payload holds {len(payload) // 4} values, header declares {rows * cols}"
                )
            heights = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float64)
            return DemGrid(heights, cell_size, None if np.isnan(nodata) else nodata)
    return _load_ascii_grid(path)


def _load_ascii_grid(path: Path) -> DemGrid:
    try:
        text = path.read_text()
    except UnicodeDecodeError as exc:
        raise DemFormatError(f"{path}: not a demf32 file and not ASCII text") from exc
    header: dict[str, float] = {}
    tokens_start = 0
    lines = text.splitlines()
    for i, line in enumerate(lines):
        parts = line.split()
        if len(parts) == 2 and parts[0].lower() in (
            "ncols", "nrows", "xllcorner", "yllcorner", "xllcenter", "yllcenter", "cellsize", "nodata_value",
        ):
            try:
                header[parts[0].lower()] = float(parts[1])
            except ValueError as exc:
                raise DemFormatError(f"{path}: bad header line {line!r}") from exc
            tokens_start = i + 1
        else:
            break
    if "ncols" not in header or "nrows" not in header or "cellsize" not in header:
        raise DemFormatError(f"{path}: missing ncols/nrows/cellsize header")
    rows, cols = int(header["nrows"]), int(header["ncols"])
    values = " ".join(lines[tokens_start:]).split()
    if len(values) != rows * cols:
        raise DemCorruptionError(f"{path}: expected {rows * cols} values, found {len(values)}")
    heights = np.array(values, dtype=np.float64).reshape(rows, cols)
    nodata = header.get("nodata_value")
    return DemGrid(heights, header["cellsize"], nodata)


def save_aerial(patch: AerialPatch, path: str | Path) -> None:
    pixels = patch.pixels
    if pixels.dtype != np.uint8:
        raise ValueError("only raw uint8 aerial patches can be written to PNG")
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG")


def load_aerial(path: str | Path) -> AerialPatch:
    with Image.open(path) as img:
        return AerialPatch(np.asarray(img.convert("RGB"), dtype=np.uint8))


# ---------------------------------------------------------------------------
# Resampling and LR/ILR construction
# ---------------------------------------------------------------------------


def resample_to(grid: DemGrid, out_rows: int, out_cols: int, out_cell_size: float) -> DemGrid:
    """Bicubic-resample a grid to exact output dimensions."""
    if grid.nodata_value is not None and grid.nodata_mask().any():
        raise ValueError("cannot resample a grid containing nodata pixels")
    return DemGrid(resample_values(grid.heights, out_rows, out_cols), out_cell_size)


def bicubic_resample(grid: DemGrid, scale: float) -> DemGrid:
    """Resample by a uniform scale factor; output dims are round(dims * scale)."""
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    rows, cols = scaled_dims(grid.rows, grid.cols, scale)
    if rows < 1 or cols < 1:
        raise ValueError(f"scale {scale} collapses {grid.rows}x{grid.cols} to an empty grid")
    return resample_to(grid, rows, cols, grid.cell_size / scale)


def make_lr_ilr(hr: DemGrid, lr_cell_size: float = 15.0) -> tuple[DemGrid, DemGrid]:
    """Downsample an HR grid to the LR resolution and interpolate it back.

    Returns ``(lr, dem_ilr)`` where ``dem_ilr`` shares the HR shape and cell
    size and is the network input / residual base.
    """
    if hr.rows < 8 or hr.cols < 8:
        raise ValueError(f"HR grid too small to downsample: {hr.rows}x{hr.cols}")
    lr = bicubic_resample(hr, hr.cell_size / lr_cell_size)
    dem_ilr = resample_to(lr, hr.rows, hr.cols, hr.cell_size)
    return lr, dem_ilr


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


def normalize_triple(triple: PatchTriple, norm_scale: float = DEFAULT_NORM_SCALE) -> PatchTriple:
    """Shift heights by the ILR mean, scale to O(1), standardize the aerial.

    Exactly invertible via :func:`denormalize_triple` given the recorded
    offset and scale.
    """
    offset = float(triple.dem_ilr.heights.mean())
    hr = DemGrid((triple.hr.heights - offset) / norm_scale, triple.hr.cell_size)
    ilr = DemGrid((triple.dem_ilr.heights - offset) / norm_scale, triple.dem_ilr.cell_size)
    scaled = triple.aerial.pixels.astype(np.float64) / 255.0
    mean = np.asarray(IMAGE_CHANNEL_MEAN)
    std = np.asarray(IMAGE_CHANNEL_STD)
    aerial = AerialPatch((scaled - mean) / std)
    return PatchTriple(hr, ilr, aerial, norm_offset=offset, norm_scale=norm_scale)


def denormalize_triple(triple: PatchTriple) -> PatchTriple:
    """Invert :func:`normalize_triple` (aerial comes back as float in [0, 255])."""
    hr = DemGrid(triple.hr.heights * triple.norm_scale + triple.norm_offset, triple.hr.cell_size)
    ilr = DemGrid(triple.dem_ilr.heights * triple.norm_scale + triple.norm_offset, triple.dem_ilr.cell_size)
    mean = np.asarray(IMAGE_CHANNEL_MEAN)
    std = np.asarray(IMAGE_CHANNEL_STD)
    pixels = (triple.aerial.pixels * std + mean) * 255.0
    return PatchTriple(hr, ilr, AerialPatch(pixels), norm_offset=0.0, norm_scale=1.0)


def denormalize_heights(values: np.ndarray, norm_offset: float, norm_scale: float) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * norm_scale + norm_offset


# ---------------------------------------------------------------------------
# Patch extraction
# ---------------------------------------------------------------------------


def flush_anchors(extent: int, window: int, stride: int) -> list[int]:
    """Row-major tiling anchors; the final anchor is flush to the border.

    Guarantees full coverage of [0, extent) by windows of the given size.
    """
    if stride <= 0:
        raise ValueError(f"stride must be positive, got {stride}")
    if window > extent:
        raise ValueError(f"window {window} exceeds extent {extent}")
    anchors = list(range(0, extent - window + 1, stride))
    if anchors[-1] != extent - window:
        anchors.append(extent - window)
    return anchors


def extract_patches(
    dem: DemGrid,
    aerial: AerialPatch,
    size: int = 200,
    stride: int | None = None,
    lr_cell_size: float = 15.0,
) -> list[PatchTriple]:
    """Tile a region into geo-registered (hr, dem_ilr, aerial) triples.

    Patches containing nodata pixels are rejected. Aerial crops are taken at
    doubled coordinates; the LR/ILR pair is derived per patch.
    """
    if stride is None:
        stride = size
    if (aerial.rows, aerial.cols) != (2 * dem.rows, 2 * dem.cols):
        raise ValueError("aerial region must be exactly double the DEM region")
    if dem.rows < size or dem.cols < size:
        raise ValueError(f"region {dem.rows}x{dem.cols} smaller than patch size {size}")
    nodata = dem.nodata_mask()
    triples = []
    for r in flush_anchors(dem.rows, size, stride):
        for c in flush_anchors(dem.cols, size, stride):
            if nodata[r : r + size, c : c + size].any():
                continue
            hr = DemGrid(dem.heights[r : r + size, c : c + size].copy(), dem.cell_size)
            crop = aerial.pixels[2 * r : 2 * (r + size), 2 * c : 2 * (c + size)].copy()
            _, dem_ilr = make_lr_ilr(hr, lr_cell_size)
            triples.append(PatchTriple(hr, dem_ilr, AerialPatch(crop)))
    return triples


# ---------------------------------------------------------------------------
# Manifest I/O
# ---------------------------------------------------------------------------


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    doc = {
        "format_version": 1,
        "seed": manifest.seed,
        "patch_size": manifest.patch_size,
        "cell_size": manifest.cell_size,
        "counts": manifest.counts(),
        "entries": [
            {"id": e.patch_id, "split": e.split, **e.paths} for e in manifest.entries
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    entries = [
        ManifestEntry(
            patch_id=item["id"],
            split=item["split"],
            paths={k: item[k] for k in ("hr", "lr", "dem_ilr", "aerial") if k in item},
        )
        for item in doc["entries"]
    ]
    return DatasetManifest(
        entries=entries,
        seed=doc["seed"],
        patch_size=doc["patch_size"],
        cell_size=doc["cell_size"],
        base_dir=path.parent,
    )


def load_triple(manifest: DatasetManifest, entry: ManifestEntry) -> PatchTriple:
    """Load one manifest entry as a raw (unnormalized) triple."""
    hr = load_dem(manifest.resolve(entry, "hr"))
    dem_ilr = load_dem(manifest.resolve(entry, "dem_ilr"))
    aerial = load_aerial(manifest.resolve(entry, "aerial"))
    return PatchTriple(hr, dem_ilr, aerial)
