#!/usr/bin/env python3
"""Score methods on a held-out split and probe the PSNR peak convention.

Trains two quick variants (full attention vs. attention removed), compares
them against the bicubic baseline on the test split, and prints the
machine-readable report. Also shows the consistency probe used to pin down
the PSNR peak definition from the published benchmark rows.

Usage: python demos/04_evaluate_methods.py [out_dir]
"""

import sys
from pathlib import Path

from terrainsr import (
    MethodSpec,
    ModelConfig,
    SynthConfig,
    TrainConfig,
    Variant,
    bicubic_method,
    compare_methods,
    gen_dataset,
    implied_peak,
)
from terrainsr.evaluation import REFERENCE_RESULTS, save_report
from terrainsr.inference import predict_patch
from terrainsr.model import load_checkpoint
from terrainsr.training import train

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/04_eval")
out_dir.mkdir(parents=True, exist_ok=True)

print("the PSNR peak convention, recovered from published rows (rmse * 10^(psnr/20)):")
for region, rows in REFERENCE_RESULTS.items():
    peak_a = implied_peak(*rows["afn"])
    peak_b = implied_peak(*rows["afn_overlap"])
    print(f"  {region:<12} {peak_a:7.0f} m vs {peak_b:7.0f} m  "
          f"(gap {abs(peak_a - peak_b) / peak_a:.2%})")
print("=> a per-region constant, consistent with the ground-truth elevation range.\n")

print("generating 16 patches and training two quick variants (this takes a few minutes)...")
manifest = gen_dataset(16, SynthConfig(seed=31, size=96, base_amplitude=80.0, persistence=0.5),
                       out_dir / "dataset")
train_cfg = TrainConfig(lr=1e-3, batch_size=4, epochs=10, seed=0)

methods = [bicubic_method()]
for variant in (Variant.AFN, Variant.NO_AFM):
    cfg = ModelConfig(base_channels=8, feedback_steps=2, residual_units=4,
                      variant=variant, finetune_rgb_branch=False)
    train(manifest, cfg, train_cfg, out_dir / variant.value, verbose=False)
    model, _ = load_checkpoint(out_dir / variant.value / "best.pt")
    methods.append(MethodSpec(name=variant.value,
                              predict=lambda t, m=model: predict_patch(m, t),
                              params=sum(p.numel() for p in model.parameters())))
    print(f"  trained {variant.value}")

report = compare_methods(manifest, methods)
print()
print(report.to_text())
print("note: the attention-free variant fuses un-gated backbone features, so at")
print("this tiny epoch budget it is still far from converged. The full model's")
print("gamma gate starts at 0, which is exactly what makes its early training stable.")
save_report(report, out_dir / "report.json", out_dir / "report.txt")
print(f"report written to {out_dir}/report.json (and .txt)")
