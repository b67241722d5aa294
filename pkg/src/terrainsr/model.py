"""The attentional feedback super-resolution network and its ablation variants.

The network consumes a normalized bicubically-upsampled DEM (1 channel) and a
normalized aerial image at twice the spatial resolution (3 channels). Feature
extraction runs once; a residual stack, an attention gate, and a
reconstruction head then run for a fixed number of feedback steps with fully
shared weights, each step emitting a residual that is added onto the DEM
input. The fused features of step t-1 re-enter the stack at step t.

Variants:
  * ``afn``    -- full model, per-step attention masks.
  * ``no-afm`` -- attention gate removed; fusion is concat + Conv(m,1).
  * ``afn0``   -- attention masks computed once, before the loop, and reused.
  * ``afn64``  -- attention trunk narrowed to 64 channels.
  * ``afnd``   -- aerial input replaced by a uniform mid-gray prior.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import torch
import torch.nn as nn

from .errors import CheckpointError

RGB_BRANCH_CHANNELS = 64  # fixed by the pretrained backbone layout
UNIFORM_AERIAL_VALUE = 0.5  # zero-information prior, in normalized units


class Variant(str, Enum):
    AFN = "afn"
    NO_AFM = "no-afm"
    AFN0 = "afn0"
    AFN64 = "afn64"
    AFND = "afnd"


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``attention_widths`` defaults to (4m, 4m, 8m, 2m); the last entry must be
    exactly 2m because the final attention output splits into two m-channel
    masks.
    """

    base_channels: int = 64  # m
    feedback_steps: int = 4  # T
    residual_units: int = 16  # N, must be even
    attention_widths: Optional[tuple[int, int, int, int]] = None
    variant: Variant = Variant.AFN
    finetune_rgb_branch: bool = True
    rgb_checkpoint: Optional[str] = None

    def __post_init__(self) -> None:
        self.variant = Variant(self.variant)
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.feedback_steps < 1:
            raise ValueError("feedback_steps must be >= 1")
        if self.residual_units < 2 or self.residual_units % 2 != 0:
            raise ValueError("residual_units must be even and >= 2")
        if self.attention_widths is not None:
            widths = tuple(int(w) for w in self.attention_widths)
            if len(widths) != 4 or min(widths) < 1:
                raise ValueError("attention_widths must be 4 positive ints")
            if widths[3] != 2 * self.base_channels:
                raise ValueError(
                    f"attention_widths[3] must be 2*base_channels={2 * self.base_channels}, got {widths[3]}"
                )
            self.attention_widths = widths

    def resolved_attention_widths(self) -> tuple[int, int, int, int]:
        if self.attention_widths is not None:
            return self.attention_widths
        m = self.base_channels
        if self.variant is Variant.AFN64:
            return (64, 64, 64, 2 * m)
        return (4 * m, 4 * m, 8 * m, 2 * m)

    def to_dict(self) -> dict:
        return {
            "base_channels": self.base_channels,
            "feedback_steps": self.feedback_steps,
            "residual_units": self.residual_units,
            "attention_widths": list(self.attention_widths) if self.attention_widths else None,
            "variant": self.variant.value,
            "finetune_rgb_branch": self.finetune_rgb_branch,
            "rgb_checkpoint": self.rgb_checkpoint,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        widths = doc.get("attention_widths")
        return cls(
            base_channels=doc["base_channels"],
            feedback_steps=doc["feedback_steps"],
            residual_units=doc["residual_units"],
            attention_widths=tuple(widths) if widths else None,
            variant=Variant(doc.get("variant", "afn")),
            finetune_rgb_branch=doc.get("finetune_rgb_branch", True),
            rgb_checkpoint=doc.get("rgb_checkpoint"),
        )


@dataclass
class AfnOutput:
    """Per-step predictions and residuals; masks kept only on request."""

    sr_steps: list[torch.Tensor]
    residual_steps: list[torch.Tensor]
    attention_masks: Optional[list[tuple[torch.Tensor, torch.Tensor]]] = None


def _ensure_4d(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() == 4:
        return x, False
    raise ValueError(f"expected a 3-D or 4-D tensor, got {tuple(x.shape)}")


class _Block(nn.Module):
    """Base for blocks that accept either (C,H,W) or (B,C,H,W) inputs."""

    def forward(self, *inputs: torch.Tensor) -> torch.Tensor:
        batched = [_ensure_4d(x) for x in inputs]
        out = self._forward(*(x for x, _ in batched))
        return out.squeeze(0) if batched[0][1] else out

    def _forward(self, *inputs: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError


class DemFeatureExtractor(_Block):
    """Conv(4m,3) + PReLU, Conv(m,3) + PReLU on the 1-channel DEM input."""

    def __init__(self, m: int):
        super().__init__()
        self.conv1 = nn.Conv2d(1, 4 * m, 3, padding=1)
        self.act1 = nn.PReLU(4 * m, init=0.25)
        self.conv2 = nn.Conv2d(4 * m, m, 3, padding=1)
        self.act2 = nn.PReLU(m, init=0.25)

    def _forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act2(self.conv2(self.act1(self.conv1(x))))


class RgbFeatureExtractor(_Block):
    """First two 64-channel conv+ReLU stages of a VGG16-style backbone,
    then a 2x2/stride-2 max-pool that aligns the doubled aerial grid to the
    DEM grid. A linear Conv(m,1) adapts channels when m != 64."""

    def __init__(self, m: int):
        super().__init__()
        self.conv1 = nn.Conv2d(3, RGB_BRANCH_CHANNELS, 3, padding=1)
        self.conv2 = nn.Conv2d(RGB_BRANCH_CHANNELS, RGB_BRANCH_CHANNELS, 3, padding=1)
        self.relu = nn.ReLU()
        self.pool = nn.MaxPool2d(2)
        self.adapter = nn.Conv2d(RGB_BRANCH_CHANNELS, m, 1) if m != RGB_BRANCH_CHANNELS else None

    def _forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-3] != 3:
            raise ValueError(f"aerial input must have 3 channels, got {x.shape[-3]}")
        x = self.pool(self.relu(self.conv2(self.relu(self.conv1(x)))))
        if self.adapter is not None:
            x = self.adapter(x)
        return x

    def load_pretrained(self, path: str | Path) -> None:
        """Load conv weights from a VGG16-layout state dict file."""
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"pretrained RGB checkpoint not found: {path}")
        state = torch.load(path, map_location="cpu", weights_only=True)
        key_map = {
            "conv1.weight": ("features.0.weight", "conv1.weight"),
            "conv1.bias": ("features.0.bias", "conv1.bias"),
            "conv2.weight": ("features.2.weight", "conv2.weight"),
            "conv2.bias": ("features.2.bias", "conv2.bias"),
        }
        own = self.state_dict()
        for target, candidates in key_map.items():
            source = next((c for c in candidates if c in state), None)
            if source is None:
                raise CheckpointError(f"{path}: missing key for {target}")
            if state[source].shape != own[target].shape:
                raise CheckpointError(
                    f"{path}: shape mismatch for {target}: {tuple(state[source].shape)}"
                )
            own[target] = state[source]
        self.load_state_dict(own)


class ResidualUnit(_Block):
    """Conv(m,1) fusing the concatenated skip inputs, then Conv(m,3)."""

    def __init__(self, in_channels: int, m: int):
        super().__init__()
        self.compress = nn.Conv2d(in_channels, m, 1)
        self.act1 = nn.PReLU(m, init=0.25)
        self.conv = nn.Conv2d(m, m, 3, padding=1)
        self.act2 = nn.PReLU(m, init=0.25)

    def _forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act2(self.conv(self.act1(self.compress(x))))


def unit_input_sources(unit: int) -> list[int]:
    """1-based indices of the units feeding unit ``unit``.

    Every unit receives its direct predecessor plus skip connections from all
    earlier units of opposite parity; the predecessor is itself the nearest
    such unit, so the list is simply unit-1, unit-3, ... (0 means the
    compressed stack input, which feeds only unit 1).
    """
    if unit == 1:
        return [0]
    return list(range(unit - 1, 0, -2))


class ResidualStack(_Block):
    """N residual units with parity-structured dense skips.

    The stack input is the DEM features concatenated with the feedback state,
    compressed to m channels; the stack output is the concat of the even
    units' outputs, compressed back to m.
    """

    def __init__(self, m: int, n_units: int):
        super().__init__()
        if n_units % 2 != 0 or n_units < 2:
            raise ValueError("the parity skip topology requires an even unit count >= 2")
        self.m = m
        self.n_units = n_units
        self.input_compress = nn.Conv2d(2 * m, m, 1)
        self.input_act = nn.PReLU(m, init=0.25)
        self.units = nn.ModuleList(
            [ResidualUnit(len(unit_input_sources(j)) * m, m) for j in range(1, n_units + 1)]
        )
        self.output_compress = nn.Conv2d((n_units // 2) * m, m, 1)
        self.output_act = nn.PReLU(m, init=0.25)

    def _forward(self, f_dem: torch.Tensor, feedback: torch.Tensor) -> torch.Tensor:
        compressed = self.input_act(self.input_compress(torch.cat([f_dem, feedback], dim=-3)))
        outputs: list[torch.Tensor] = []
        for j in range(1, self.n_units + 1):
            sources = unit_input_sources(j)
            if sources == [0]:
                x = compressed
            else:
                x = torch.cat([outputs[i - 1] for i in sources], dim=-3)
            outputs.append(self.units[j - 1](x))
        even = torch.cat([outputs[j - 1] for j in range(2, self.n_units + 1, 2)], dim=-3)
        return self.output_act(self.output_compress(even))


class AttentionGate(nn.Module):  # returns a mask pair, so handles batching itself
    """Four-layer FCN turning (stack features, aerial features) into two
    sigmoid gating masks."""

    def __init__(self, m: int, widths: Sequence[int]):
        super().__init__()
        w1, w2, w3, w4 = widths
        if w4 != 2 * m:
            raise ValueError("final attention width must be 2*m for the mask split")
        self.conv1 = nn.Conv2d(2 * m, w1, 3, padding=1)
        self.act1 = nn.PReLU(w1, init=0.25)
        self.conv2 = nn.Conv2d(w1, w2, 3, padding=1)
        self.act2 = nn.PReLU(w2, init=0.25)
        self.conv3 = nn.Conv2d(w2, w3, 3, padding=1)
        self.act3 = nn.PReLU(w3, init=0.25)
        self.conv4 = nn.Conv2d(w3, w4, 3, padding=1)
        self.m = m

    def forward(self, f_stack: torch.Tensor, f_rgb: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if f_stack.shape != f_rgb.shape:
            raise ValueError(f"attention inputs must share a shape: {f_stack.shape} vs {f_rgb.shape}")
        (f_stack, squeeze), (f_rgb, _) = _ensure_4d(f_stack), _ensure_4d(f_rgb)
        x = torch.cat([f_stack, f_rgb], dim=-3)
        x = self.act1(self.conv1(x))
        x = self.act2(self.conv2(x))
        x = self.act3(self.conv3(x))
        masks = torch.sigmoid(self.conv4(x))
        if squeeze:
            masks = masks.squeeze(0)
        return masks.narrow(-3, 0, self.m), masks.narrow(-3, self.m, self.m)


class ConcatFusion(_Block):
    """Attention-free fusion for the no-afm ablation: concat + Conv(m,1)."""

    def __init__(self, m: int):
        super().__init__()
        self.conv = nn.Conv2d(2 * m, m, 1)
        self.act = nn.PReLU(m, init=0.25)

    def _forward(self, f_stack: torch.Tensor, f_rgb: torch.Tensor) -> torch.Tensor:
        return self.act(self.conv(torch.cat([f_stack, f_rgb], dim=-3)))


class Reconstruction(_Block):
    """Conv(m,3) + PReLU, then a linear Conv(1,3) emitting the residual."""

    def __init__(self, m: int):
        super().__init__()
        self.conv1 = nn.Conv2d(m, m, 3, padding=1)
        self.act1 = nn.PReLU(m, init=0.25)
        self.conv2 = nn.Conv2d(m, 1, 3, padding=1)

    def _forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.conv2(self.act1(self.conv1(x)))


def fuse_features(
    f_stack: torch.Tensor,
    f_rgb: torch.Tensor,
    mask_dem: torch.Tensor,
    mask_rgb: torch.Tensor,
    gamma: torch.Tensor | float,
) -> torch.Tensor:
    """Gated fusion: f_stack * mask_dem + gamma * f_rgb * mask_rgb (the
    aerial term is scaled by the learnable gamma)."""
    if not (f_stack.shape == f_rgb.shape == mask_dem.shape == mask_rgb.shape):
        raise ValueError("all four feature maps must share a shape")
    return f_stack * mask_dem + gamma * f_rgb * mask_rgb


class AFN(nn.Module):
    """Feedback super-resolution network; forward returns all T predictions."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        m = config.base_channels
        self.dem_branch = DemFeatureExtractor(m)
        self.rgb_branch = RgbFeatureExtractor(m)
        self.residual_stack = ResidualStack(m, config.residual_units)
        self.reconstruction = Reconstruction(m)
        if config.variant is Variant.NO_AFM:
            self.attention = None
            self.fusion = ConcatFusion(m)
            self.gamma = None
        else:
            self.attention = AttentionGate(m, config.resolved_attention_widths())
            self.fusion = None
            self.gamma = nn.Parameter(torch.zeros(()))

    def extract_rgb_features(self, aerial: torch.Tensor) -> torch.Tensor:
        """RGB-branch features; applies the uniform prior for the afnd variant."""
        if self.config.variant is Variant.AFND:
            aerial = torch.full_like(aerial, UNIFORM_AERIAL_VALUE)
        return self.rgb_branch(aerial)

    def forward(
        self,
        dem_ilr: torch.Tensor,
        aerial: Optional[torch.Tensor] = None,
        *,
        rgb_features: Optional[torch.Tensor] = None,
        keep_masks: bool = False,
    ) -> AfnOutput:
        dem, squeeze = _ensure_4d(dem_ilr)
        if not torch.isfinite(dem).all():
            raise ValueError("DEM input contains non-finite values")
        if rgb_features is not None:
            f_rgb, _ = _ensure_4d(rgb_features)
        else:
            if aerial is None:
                raise ValueError("either aerial or rgb_features is required")
            aer, _ = _ensure_4d(aerial)
            if aer.shape[-2:] != (2 * dem.shape[-2], 2 * dem.shape[-1]):
                raise ValueError(
                    f"aerial dims {tuple(aer.shape[-2:])} must be double the DEM dims {tuple(dem.shape[-2:])}"
                )
            if not torch.isfinite(aer).all():
                raise ValueError("aerial input contains non-finite values")
            f_rgb = self.extract_rgb_features(aer)

        f_dem = self.dem_branch(dem)
        static_masks = None
        if self.config.variant is Variant.AFN0:
            static_masks = self.attention(f_dem, f_rgb)

        sr_steps: list[torch.Tensor] = []
        residual_steps: list[torch.Tensor] = []
        mask_steps: list[tuple[torch.Tensor, torch.Tensor]] = []
        feedback = f_dem
        for _ in range(self.config.feedback_steps):
            f_stack = self.residual_stack(f_dem, feedback)
            if self.config.variant is Variant.NO_AFM:
                fused = self.fusion(f_stack, f_rgb)
            else:
                masks = static_masks if static_masks is not None else self.attention(f_stack, f_rgb)
                fused = fuse_features(f_stack, f_rgb, masks[0], masks[1], self.gamma)
                if keep_masks:
                    mask_steps.append(masks)
            i_res = self.reconstruction(fused)
            sr_steps.append(i_res + dem)
            residual_steps.append(i_res)
            feedback = fused

        if squeeze:
            sr_steps = [t.squeeze(0) for t in sr_steps]
            residual_steps = [t.squeeze(0) for t in residual_steps]
            mask_steps = [(a.squeeze(0), b.squeeze(0)) for a, b in mask_steps]
        return AfnOutput(
            sr_steps=sr_steps,
            residual_steps=residual_steps,
            attention_masks=mask_steps if keep_masks and mask_steps else None,
        )


def param_count(config: ModelConfig) -> int:
    """Number of scalar parameters; invariant in feedback_steps (shared weights)."""
    model = AFN(config)
    return sum(p.numel() for p in model.parameters())


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    model: AFN,
    epoch: int,
    extra: Optional[dict] = None,
) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "epoch": epoch,
        "state_dict": model.state_dict(),
    }
    if extra:
        payload.update(extra)
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[AFN, dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:  # torch raises several unpickling error types
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {payload.get('format_version')}")
    config = ModelConfig.from_dict(payload["model_config"])
    model = AFN(config)
    model.load_state_dict(payload["state_dict"])
    return model, payload
