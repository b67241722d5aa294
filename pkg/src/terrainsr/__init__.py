"""Terrain super-resolution with an attention-gated feedback network.

A small, fully testable pipeline: synthetic DEM + pseudo-aerial data,
Catmull-Rom raster resampling, the feedback network and its ablation
variants, multi-step L1 training, overlapped tiled inference, and
RMSE/PSNR evaluation.
"""

from .errors import (
    CheckpointError,
    DemCorruptionError,
    DemFormatError,
    TerrainSrError,
    TrainingDivergedError,
)
from .evaluation import (
    EvalReport,
    EvalRow,
    MethodSpec,
    bicubic_method,
    compare_methods,
    implied_peak,
    psnr,
    rmse,
)
from .inference import TilePlan, plan_tiles, predict_patch, predict_region
from .model import (
    AFN,
    AfnOutput,
    ModelConfig,
    Variant,
    fuse_features,
    load_checkpoint,
    param_count,
    save_checkpoint,
)
from .raster_io import (
    AerialPatch,
    DatasetManifest,
    DemGrid,
    PatchTriple,
    bicubic_resample,
    denormalize_triple,
    extract_patches,
    load_aerial,
    load_dem,
    load_manifest,
    make_lr_ilr,
    normalize_triple,
    save_aerial,
    save_dem,
    save_manifest,
)
from .synthetic import SynthConfig, gen_aerial, gen_dataset, gen_dem, gen_triple, hillshade
from .training import (
    TrainConfig,
    TrainState,
    gradient_check,
    init_params,
    lr_at_epoch,
    multi_step_l1_loss,
    overfit_single_patch,
    train,
)

__version__ = "0.1.0"
