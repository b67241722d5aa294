"""Self-contained correctness checks, runnable from the CLI.

The convolution oracles here are deliberately naive: explicit loops over
output channels and pixels with direct window products, sharing no code with
the network's forward path. They exist so the fast implementation can be
checked against something independently simple.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch

from .evaluation import implied_peak, psnr, reference_peak_consistency, rmse
from .inference import plan_tiles, predict_patch, predict_region
from .model import (
    AFN,
    AttentionGate,
    DemFeatureExtractor,
    ModelConfig,
    Reconstruction,
    ResidualStack,
    RgbFeatureExtractor,
    Variant,
    fuse_features,
    param_count,
    unit_input_sources,
)
from .raster_io import AerialPatch, DemGrid, PatchTriple
from .training import gradient_check, init_params


# ---------------------------------------------------------------------------
# Naive reference implementations
# ---------------------------------------------------------------------------


def naive_conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, padding: int = 1) -> np.ndarray:
    """Direct dense convolution: loop over output channels and pixels."""
    channels, height, width = x.shape
    out_ch, in_ch, k, _ = weight.shape
    assert in_ch == channels
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    out_h = height + 2 * padding - k + 1
    out_w = width + 2 * padding - k + 1
    out = np.empty((out_ch, out_h, out_w))
    for o in range(out_ch):
        for i in range(out_h):
            for j in range(out_w):
                out[o, i, j] = np.sum(weight[o] * xp[:, i : i + k, j : j + k]) + bias[o]
    return out


def naive_prelu(x: np.ndarray, slopes: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, x, slopes[:, None, None] * x)


def naive_relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def naive_sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def naive_maxpool2(x: np.ndarray) -> np.ndarray:
    channels, height, width = x.shape
    out = np.empty((channels, height // 2, width // 2))
    for c in range(channels):
        for i in range(height // 2):
            for j in range(width // 2):
                out[c, i, j] = x[c, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2].max()
    return out


def _np(t: torch.Tensor) -> np.ndarray:
    return t.detach().double().numpy()


def naive_dem_features(module: DemFeatureExtractor, x: np.ndarray) -> np.ndarray:
    h = naive_prelu(naive_conv2d(x, _np(module.conv1.weight), _np(module.conv1.bias)), _np(module.act1.weight))
    return naive_prelu(naive_conv2d(h, _np(module.conv2.weight), _np(module.conv2.bias)), _np(module.act2.weight))


def naive_rgb_features(module: RgbFeatureExtractor, x: np.ndarray) -> np.ndarray:
    h = naive_relu(naive_conv2d(x, _np(module.conv1.weight), _np(module.conv1.bias)))
    h = naive_relu(naive_conv2d(h, _np(module.conv2.weight), _np(module.conv2.bias)))
    h = naive_maxpool2(h)
    if module.adapter is not None:
        h = naive_conv2d(h, _np(module.adapter.weight), _np(module.adapter.bias), padding=0)
    return h


def naive_residual_stack(module: ResidualStack, f_dem: np.ndarray, feedback: np.ndarray) -> np.ndarray:
    stacked = np.concatenate([f_dem, feedback], axis=0)
    compressed = naive_prelu(
        naive_conv2d(stacked, _np(module.input_compress.weight), _np(module.input_compress.bias), padding=0),
        _np(module.input_act.weight),
    )
    outputs: list[np.ndarray] = []
    for j in range(1, module.n_units + 1):
        sources = unit_input_sources(j)
        x = compressed if sources == [0] else np.concatenate([outputs[i - 1] for i in sources], axis=0)
        unit = module.units[j - 1]
        h = naive_prelu(naive_conv2d(x, _np(unit.compress.weight), _np(unit.compress.bias), padding=0),
                        _np(unit.act1.weight))
        h = naive_prelu(naive_conv2d(h, _np(unit.conv.weight), _np(unit.conv.bias)), _np(unit.act2.weight))
        outputs.append(h)
    even = np.concatenate([outputs[j - 1] for j in range(2, module.n_units + 1, 2)], axis=0)
    return naive_prelu(
        naive_conv2d(even, _np(module.output_compress.weight), _np(module.output_compress.bias), padding=0),
        _np(module.output_act.weight),
    )


def naive_attention(module: AttentionGate, f_stack: np.ndarray, f_rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.concatenate([f_stack, f_rgb], axis=0)
    x = naive_prelu(naive_conv2d(x, _np(module.conv1.weight), _np(module.conv1.bias)), _np(module.act1.weight))
    x = naive_prelu(naive_conv2d(x, _np(module.conv2.weight), _np(module.conv2.bias)), _np(module.act2.weight))
    x = naive_prelu(naive_conv2d(x, _np(module.conv3.weight), _np(module.conv3.bias)), _np(module.act3.weight))
    masks = naive_sigmoid(naive_conv2d(x, _np(module.conv4.weight), _np(module.conv4.bias)))
    return masks[: module.m], masks[module.m :]


def naive_reconstruction(module: Reconstruction, x: np.ndarray) -> np.ndarray:
    h = naive_prelu(naive_conv2d(x, _np(module.conv1.weight), _np(module.conv1.bias)), _np(module.act1.weight))
    return naive_conv2d(h, _np(module.conv2.weight), _np(module.conv2.bias))


def naive_forward(model: AFN, dem: np.ndarray, aerial: np.ndarray) -> list[np.ndarray]:
    """Hand-unrolled feedback loop over the naive blocks; returns SR steps."""
    cfg = model.config
    if cfg.variant is Variant.AFND:
        aerial = np.full_like(aerial, 0.5)
    f_rgb = naive_rgb_features(model.rgb_branch, aerial)
    f_dem = naive_dem_features(model.dem_branch, dem)
    static_masks = naive_attention(model.attention, f_dem, f_rgb) if cfg.variant is Variant.AFN0 else None
    gamma = float(model.gamma.detach()) if model.gamma is not None else 0.0
    feedback = f_dem
    srs = []
    for _ in range(cfg.feedback_steps):
        f_stack = naive_residual_stack(model.residual_stack, f_dem, feedback)
        if cfg.variant is Variant.NO_AFM:
            stacked = np.concatenate([f_stack, f_rgb], axis=0)
            fused = naive_prelu(
                naive_conv2d(stacked, _np(model.fusion.conv.weight), _np(model.fusion.conv.bias), padding=0),
                _np(model.fusion.act.weight),
            )
        else:
            masks = static_masks if static_masks is not None else naive_attention(model.attention, f_stack, f_rgb)
            fused = f_stack * masks[0] + gamma * f_rgb * masks[1]
        srs.append(naive_reconstruction(model.reconstruction, fused) + dem)
        feedback = fused
    return srs


# ---------------------------------------------------------------------------
# Check suite
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _run(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    start = time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:
        return CheckResult(name, False, f"{type(exc).__name__}: {exc}", time.perf_counter() - start)
    return CheckResult(name, passed, detail, time.perf_counter() - start)


def _tiny_model(seed: int = 0, variant: Variant = Variant.AFN, m: int = 4, n: int = 4, t: int = 2) -> AFN:
    cfg = ModelConfig(base_channels=m, feedback_steps=t, residual_units=n, variant=variant)
    return init_params(cfg, seed).double()


def check_gradients() -> tuple[bool, str]:
    err = gradient_check(seed=0)
    return err < 1e-3, f"max relative error {err:.3e} (threshold 1e-3)"


def check_conv_oracles() -> tuple[bool, str]:
    rng = np.random.default_rng(7)
    model = _tiny_model()
    dem = rng.normal(size=(1, 12, 12))
    aerial = rng.normal(size=(3, 24, 24))
    worst = 0.0

    f_dem_ref = naive_dem_features(model.dem_branch, dem)
    f_dem = _np(model.dem_branch(torch.from_numpy(dem)))
    worst = max(worst, float(np.abs(f_dem - f_dem_ref).max()))

    f_rgb_ref = naive_rgb_features(model.rgb_branch, aerial)
    f_rgb = _np(model.rgb_branch(torch.from_numpy(aerial)))
    worst = max(worst, float(np.abs(f_rgb - f_rgb_ref).max()))

    f_stack_ref = naive_residual_stack(model.residual_stack, f_dem_ref, f_dem_ref)
    f_stack = _np(model.residual_stack(torch.from_numpy(f_dem_ref), torch.from_numpy(f_dem_ref)))
    worst = max(worst, float(np.abs(f_stack - f_stack_ref).max()))

    masks_ref = naive_attention(model.attention, f_stack_ref, f_rgb_ref)
    masks = model.attention(torch.from_numpy(f_stack_ref), torch.from_numpy(f_rgb_ref))
    worst = max(worst, float(np.abs(_np(masks[0]) - masks_ref[0]).max()))
    worst = max(worst, float(np.abs(_np(masks[1]) - masks_ref[1]).max()))

    recon_ref = naive_reconstruction(model.reconstruction, f_stack_ref)
    recon = _np(model.reconstruction(torch.from_numpy(f_stack_ref)))
    worst = max(worst, float(np.abs(recon - recon_ref).max()))

    srs_ref = naive_forward(model, dem, aerial)
    out = model(torch.from_numpy(dem), torch.from_numpy(aerial))
    for sr, sr_ref in zip(out.sr_steps, srs_ref):
        worst = max(worst, float(np.abs(_np(sr) - sr_ref).max()))

    return worst < 1e-5, f"max |fast - naive| = {worst:.3e} (threshold 1e-5)"


def check_fusion() -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    shape = (2, 4, 4)
    f_stack, f_rgb = rng.normal(size=shape), rng.normal(size=shape)
    mask_dem, mask_rgb = rng.uniform(0.01, 0.99, shape), rng.uniform(0.01, 0.99, shape)
    gamma = 0.7
    fused = _np(
        fuse_features(
            torch.from_numpy(f_stack), torch.from_numpy(f_rgb),
            torch.from_numpy(mask_dem), torch.from_numpy(mask_rgb), gamma,
        )
    )
    expected = f_stack * mask_dem + gamma * f_rgb * mask_rgb
    err = float(np.abs(fused - expected).max())

    zero_gamma = _np(
        fuse_features(
            torch.from_numpy(f_stack), torch.from_numpy(f_rgb),
            torch.from_numpy(mask_dem), torch.from_numpy(mask_rgb), 0.0,
        )
    )
    err = max(err, float(np.abs(zero_gamma - f_stack * mask_dem).max()))

    ones = np.ones(shape)
    additive = _np(
        fuse_features(
            torch.from_numpy(f_stack), torch.from_numpy(f_rgb),
            torch.from_numpy(ones), torch.from_numpy(ones), 1.0,
        )
    )
    err = max(err, float(np.abs(additive - (f_stack + f_rgb)).max()))
    return err < 1e-7, f"max fusion error {err:.3e} (threshold 1e-7)"


def _zero_residual(model: AFN) -> AFN:
    with torch.no_grad():
        model.reconstruction.conv2.weight.zero_()
        model.reconstruction.conv2.bias.zero_()
    return model


def check_stitching() -> tuple[bool, str]:
    plan = plan_tiles(500, 500, patch_size=200, overlap_fraction=0.25)
    dev = float(np.abs(plan.weight_sum() - 1.0).max())
    if dev >= 1e-6:
        return False, f"partition-of-unity deviation {dev:.3e}"

    rng = np.random.default_rng(3)
    model = _zero_residual(_tiny_model(m=4, n=2))  # float64: ILR must come back exactly
    rows, cols, patch = 80, 112, 48
    ilr = DemGrid(rng.normal(1000.0, 40.0, (rows, cols)), 2.0)
    aerial = AerialPatch(rng.integers(0, 256, (2 * rows, 2 * cols, 3), dtype=np.uint8))
    small_plan = plan_tiles(rows, cols, patch_size=patch, overlap_fraction=0.25)
    out = predict_region(model, ilr, aerial, small_plan)
    zero_err = float(np.abs(out.heights - ilr.heights).max())
    if zero_err >= 1e-9:
        return False, f"zero-residual stitched output differs from ILR by {zero_err:.3e} m"

    model2 = _tiny_model(seed=5, m=4, n=2).float()
    rows2, cols2 = 48, 84
    ilr2 = DemGrid(rng.normal(500.0, 30.0, (rows2, cols2)), 2.0)
    aerial2 = AerialPatch(rng.integers(0, 256, (2 * rows2, 2 * cols2, 3), dtype=np.uint8))
    plan2 = plan_tiles(rows2, cols2, patch_size=48, overlap_fraction=0.25)
    stitched = predict_region(model2, ilr2, aerial2, plan2)
    oracle = np.zeros((rows2, cols2))
    for (r, c), weight in zip(plan2.anchors, plan2.weights):
        tile_ilr = DemGrid(ilr2.heights[r : r + 48, c : c + 48].copy(), 2.0)
        tile_aer = AerialPatch(aerial2.pixels[2 * r : 2 * (r + 48), 2 * c : 2 * (c + 48)].copy())
        pred = predict_patch(model2, PatchTriple(tile_ilr, tile_ilr, tile_aer))
        oracle[r : r + 48, c : c + 48] += weight * pred.heights
    stitch_err = float(np.abs(stitched.heights - oracle).max())
    if stitch_err >= 1e-5:
        return False, f"stitching differs from brute-force accumulation by {stitch_err:.3e} m"
    return True, (
        f"weight-sum dev {dev:.1e}; zero-residual err {zero_err:.1e} m; two-tile oracle err {stitch_err:.1e} m"
    )


def check_param_count() -> tuple[bool, str]:
    full = ModelConfig(base_channels=64, feedback_steps=4, residual_units=16)
    count = param_count(full)
    t_invariant = param_count(ModelConfig(base_channels=64, feedback_steps=1, residual_units=16)) == count
    in_band = 3_000_000 <= count <= 12_000_000
    below_fcn = count < 20_000_000
    passed = t_invariant and in_band and below_fcn
    return passed, f"count {count:,} (band [3e6, 1.2e7], T-invariant: {t_invariant})"


def check_reference_consistency() -> tuple[bool, str]:
    peaks = reference_peak_consistency()
    worst_gap = max(gap for _, _, gap in peaks.values())
    ok = worst_gap < 0.01

    rt_err = 0.0
    grid = DemGrid(np.arange(36, dtype=float).reshape(6, 6), 2.0)
    noisy = DemGrid(grid.heights + 0.75, 2.0)
    for peak in (10.0, 1487.0, 2107.0):
        db = psnr(noisy, grid, peak)
        rt_err = max(rt_err, abs(implied_peak(rmse(noisy, grid), db) - peak) / peak)
    ok = ok and rt_err < 1e-9
    summary = ", ".join(f"{region} ~{a:.0f} m" for region, (a, _, _) in peaks.items())
    return ok, f"implied peaks {summary}; worst cross-row gap {worst_gap:.2%}; round-trip {rt_err:.1e}"


ALL_CHECKS = [
    ("gradient-check", check_gradients),
    ("conv-oracle-equivalence", check_conv_oracles),
    ("fusion-oracle", check_fusion),
    ("stitch-partition-of-unity", check_stitching),
    ("param-count-band", check_param_count),
    ("reference-peak-consistency", check_reference_consistency),
]


def run_all_checks(names: Optional[list[str]] = None) -> list[CheckResult]:
    selected = ALL_CHECKS if names is None else [(n, f) for n, f in ALL_CHECKS if n in names]
    return [_run(name, fn) for name, fn in selected]
