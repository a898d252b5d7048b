"""Stage-1 walkthrough on the boundary toy: pretrain the calibration
network F against one-hot labels and check it recovers the analytic
per-pixel marginal.

The vertical-boundary task hides the boundary column uniformly at random,
so the true class-1 probability ramps linearly across the image; a
well-calibrated F must reproduce that ramp from noisy two-channel inputs.
Writes marginal/F heatmaps and a reliability diagram.

Usage: python3 demos/boundary_pretrain.py [outdir]
"""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from car import evaluate, experiments, svgplot, training

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/boundary_pretrain")
out.mkdir(parents=True, exist_ok=True)

exp = experiments.build_boundary(seed=0)
features, targets, _ = exp.generate()

print(f"pretraining F on {len(features)} boundary images "
      f"({exp.train.pretrain_iters} iterations) ...")
t0 = time.time()
record = training.RunRecord()
training.pretrain_calibration((features, targets), exp.f_spec, exp.train,
                              record=record)
print(f"  done in {time.time() - t0:.1f}s")

report = evaluate.eval_pretrained(exp, record, seed=0)
print(f"  mean |F - analytic marginal| = {report['mae']:.4f}")
print(f"  reliability ECE              = {report['ece']:.4f}")

h, w = exp.label_shape()
for name, grid in [("marginal_true", report["marginal"][..., 1]),
                   ("marginal_learned", report["f_mean"][..., 1])]:
    fig = svgplot.Figure(title=f"class-1 probability ({name})",
                         xlabel="column", ylabel="row")
    fig.heatmap(grid, vmin=0.0, vmax=1.0, label=name)
    fig.save(out / f"{name}.svg")

rel = report["reliability"]
fig = svgplot.Figure(title="reliability diagram (pretrained F)",
                     xlabel="confidence", ylabel="empirical accuracy")
fig.bars(rel.edges[:-1], rel.edges[1:], rel.accuracy, label="accuracy")
fig.polyline([0.0, 1.0], [0.0, 1.0], label="ideal")
fig.save(out / "reliability.svg")

print(f"figures in {out}/")
