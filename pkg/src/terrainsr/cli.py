"""Operator entry point: synth / train / infer / eval / verify subcommands.

Every flag has a config-file equivalent (JSON with nested sections matching
the module configs); flags override file values, and the fully-resolved
config is echoed into each output directory for reproducibility.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
The AFN_DATA_DIR environment variable supplies the default data root.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

from .errors import TerrainSrError
from .evaluation import MethodSpec, bicubic_method, compare_methods, save_report
from .inference import plan_tiles, predict_region, save_hillshade_png
from .model import ModelConfig, Variant, load_checkpoint
from .raster_io import bicubic_resample, load_aerial, load_dem, load_manifest, save_dem
from .synthetic import SynthConfig, gen_dataset
from .training import TrainConfig, train
from .verify import run_all_checks

VARIANT_NAMES = [v.value for v in Variant]

DEFAULT_CONFIG: dict = {
    "data": {
        "n": 40,
        "seed": 0,
        "size": 200,
        "octaves": 6,
        "base_amplitude": 120.0,
        "persistence": 0.55,
        "cell_size": 2.0,
        "lr_cell_size": 15.0,
    },
    "model": {
        "base_channels": 64,
        "feedback_steps": 4,
        "residual_units": 16,
        "attention_widths": None,
        "variant": "afn",
        "finetune_rgb_branch": True,
        "rgb_checkpoint": None,
    },
    "train": {
        "lr": 1e-4,
        "lr_decay": 0.5,
        "lr_milestones": [45, 60, 70],
        "batch_size": 4,
        "epochs": 75,
        "seed": 0,
        "norm_scale": 100.0,
    },
    "infer": {
        "overlap": 0.25,
        "patch_size": 200,
    },
    "eval": {
        "peak": None,
    },
}


class UsageError(Exception):
    """Bad flags or config; maps to exit code 2."""


def data_root() -> Path:
    return Path(os.environ.get("AFN_DATA_DIR", "data"))


def load_run_config(path: str | None) -> dict:
    """Defaults deep-merged with an optional JSON config file."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise UsageError(f"config file not found: {p}")
        try:
            user = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {p} is not valid JSON: {exc}") from exc
        for section, values in user.items():
            if section not in config:
                raise UsageError(f"unknown config section {section!r} in {p}")
            if not isinstance(values, dict):
                raise UsageError(f"config section {section!r} must be an object")
            for key, value in values.items():
                if key not in config[section]:
                    raise UsageError(f"unknown config key {section}.{key} in {p}")
                config[section][key] = value
    return config


def echo_config(config: dict, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "resolved_config.json", "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _override(config: dict, section: str, key: str, value) -> None:
    if value is not None:
        config[section][key] = value


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    _override(config, "data", "n", args.n)
    _override(config, "data", "seed", args.seed)
    _override(config, "data", "size", args.size)
    _override(config, "data", "octaves", args.octaves)
    data = config["data"]
    if data["n"] < 3:
        raise UsageError(f"--n must be >= 3 (got {data['n']}): the split needs train, val and test patches")
    out_dir = Path(args.out) if args.out else data_root() / "synth"
    cfg = SynthConfig(
        seed=data["seed"],
        size=data["size"],
        octaves=data["octaves"],
        base_amplitude=data["base_amplitude"],
        persistence=data["persistence"],
        cell_size=data["cell_size"],
        lr_cell_size=data["lr_cell_size"],
    )
    manifest = gen_dataset(data["n"], cfg, out_dir)
    echo_config(config, out_dir)
    counts = manifest.counts()
    print(f"wrote {data['n']} triples to {out_dir} "
          f"(train {counts['train']} / val {counts['val']} / test {counts['test']})")
    return 0


def _model_config_from(config: dict) -> ModelConfig:
    section = config["model"]
    widths = section["attention_widths"]
    return ModelConfig(
        base_channels=section["base_channels"],
        feedback_steps=section["feedback_steps"],
        residual_units=section["residual_units"],
        attention_widths=tuple(widths) if widths else None,
        variant=Variant(section["variant"]),
        finetune_rgb_branch=section["finetune_rgb_branch"],
        rgb_checkpoint=section["rgb_checkpoint"],
    )


def cmd_train(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    _override(config, "model", "variant", args.variant)
    _override(config, "train", "epochs", args.epochs)
    _override(config, "train", "batch_size", args.batch_size)
    _override(config, "train", "lr", args.lr)
    _override(config, "train", "seed", args.seed)
    if args.no_finetune_rgb:
        config["model"]["finetune_rgb_branch"] = False

    manifest_path = Path(args.manifest) if args.manifest else data_root() / "synth" / "manifest.json"
    if not manifest_path.exists():
        raise UsageError(f"manifest not found: {manifest_path}")
    manifest = load_manifest(manifest_path)

    try:
        model_cfg = _model_config_from(config)
        section = config["train"]
        train_cfg = TrainConfig(
            lr=section["lr"],
            lr_decay=section["lr_decay"],
            lr_milestones=tuple(section["lr_milestones"]),
            batch_size=section["batch_size"],
            epochs=section["epochs"],
            seed=section["seed"],
            norm_scale=section["norm_scale"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    out_dir = Path(args.out) if args.out else Path("runs") / model_cfg.variant.value
    echo_config(config, out_dir)
    state = train(manifest, model_cfg, train_cfg, out_dir, resume=args.resume)
    print(f"finished {state.epoch} epochs; best val RMSE {state.best_val_rmse:.3f} m; "
          f"checkpoints and metrics.csv in {out_dir}")
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    _override(config, "infer", "overlap", args.overlap)
    _override(config, "infer", "patch_size", args.patch_size)
    overlap = config["infer"]["overlap"]
    if not 0.0 <= overlap < 0.5:
        raise UsageError(f"--overlap must lie in [0, 0.5), got {overlap}")

    model, _ = load_checkpoint(args.checkpoint)
    dem = load_dem(args.dem)
    aerial = load_aerial(args.aerial)
    if args.from_lr:
        dem = bicubic_resample(dem, dem.cell_size / config["data"]["cell_size"])

    norm_scale = config["train"]["norm_scale"]
    patch = min(config["infer"]["patch_size"], dem.rows, dem.cols)
    plan = plan_tiles(dem.rows, dem.cols, patch_size=patch, overlap_fraction=overlap)
    result = predict_region(model, dem, aerial, plan, norm_scale=norm_scale)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    save_dem(result, out_path)
    echo_config(config, out_path.parent)
    if args.hillshade:
        save_hillshade_png(result, args.hillshade)
    print(f"super-resolved {dem.rows}x{dem.cols} region with {len(plan.anchors)} tiles -> {out_path}")
    return 0


def _parse_method(spec: str) -> MethodSpec:
    from .errors import CheckpointError
    from .inference import predict_patch

    if spec == "bicubic":
        return bicubic_method()
    if "=" not in spec:
        raise UsageError(f"method {spec!r} must be 'bicubic' or NAME=CHECKPOINT.pt")
    name, ckpt = spec.split("=", 1)
    try:
        model, _ = load_checkpoint(ckpt)
    except CheckpointError as exc:
        # reported per region as an absent row rather than aborting the run
        def unavailable(triple, _exc=exc):
            raise CheckpointError(str(_exc))

        return MethodSpec(name=name, predict=unavailable)
    return MethodSpec(
        name=name,
        predict=lambda triple, m=model: predict_patch(m, triple),
        params=sum(p.numel() for p in model.parameters()),
    )


def cmd_eval(args: argparse.Namespace) -> int:
    config = load_run_config(args.config)
    _override(config, "eval", "peak", args.peak)
    manifest_path = Path(args.manifest) if args.manifest else data_root() / "synth" / "manifest.json"
    if not manifest_path.exists():
        raise UsageError(f"manifest not found: {manifest_path}")
    manifest = load_manifest(manifest_path)
    if not manifest.split("test"):
        print("error: no test regions in manifest", file=sys.stderr)
        return 1

    methods = [_parse_method(s) for s in (args.method or [])]
    if not args.no_baseline and not any(m.name == "bicubic" for m in methods):
        methods.insert(0, bicubic_method())
    if not methods:
        raise UsageError("no methods to evaluate (all baselines disabled)")

    report = compare_methods(manifest, methods, peak_override=config["eval"]["peak"])
    print(report.to_text(), end="")
    if args.report:
        report_path = Path(args.report)
        report_path.parent.mkdir(parents=True, exist_ok=True)
        save_report(report, report_path, report_path.with_suffix(".txt"))
        echo_config(config, report_path.parent)
        print(f"report written to {report_path}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    results = run_all_checks()
    if args.json:
        doc = [
            {"name": r.name, "passed": r.passed, "detail": r.detail, "seconds": round(r.seconds, 3)}
            for r in results
        ]
        print(json.dumps(doc, indent=2))
    else:
        for r in results:
            mark = "PASS" if r.passed else "FAIL"
            print(f"[{mark}] {r.name}: {r.detail} ({r.seconds:.1f}s)")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="terrainsr",
        description="Terrain super-resolution: synthetic data, training, tiled inference, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic DEM + aerial dataset")
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--n", type=int, help="number of patches (>= 3)")
    p.add_argument("--seed", type=int)
    p.add_argument("--size", type=int, help="HR patch size in pixels")
    p.add_argument("--octaves", type=int)
    p.add_argument("--out", help="output directory (default $AFN_DATA_DIR/synth)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset manifest")
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--manifest", help="dataset manifest path")
    p.add_argument("--out", help="run directory for checkpoints and metrics")
    p.add_argument("--variant", choices=VARIANT_NAMES, help="architecture variant")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-finetune-rgb", action="store_true", help="freeze the RGB feature branch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="super-resolve a DEM region with a trained model")
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dem", required=True, help="input DEM (.demf32 or ASCII grid), at the upsampled grid")
    p.add_argument("--aerial", required=True, help="RGB PNG at twice the DEM grid")
    p.add_argument("--out", required=True, help="output .demf32 path")
    p.add_argument("--overlap", type=float, help="tile overlap fraction in [0, 0.5)")
    p.add_argument("--patch-size", type=int)
    p.add_argument("--hillshade", help="also write an 8-bit hillshade PNG here")
    p.add_argument("--from-lr", action="store_true",
                   help="input DEM is the low-resolution grid; bicubic-upsample it first")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score methods on the test split")
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--manifest", help="dataset manifest path")
    p.add_argument("--method", action="append",
                   help="'bicubic' or NAME=CHECKPOINT.pt (repeatable)")
    p.add_argument("--report", help="write a JSON report here (plus a .txt twin)")
    p.add_argument("--no-baseline", action="store_true", help="do not add the bicubic baseline")
    p.add_argument("--peak", type=float, help="override the per-region PSNR peak")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the built-in correctness checks")
    p.add_argument("--json", action="store_true", help="machine-readable results")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TerrainSrError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
