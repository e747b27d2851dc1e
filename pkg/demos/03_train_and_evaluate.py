"""
Training a decoder on synthetic scenes
======================================

A short run on the desk-scale suite: 512 training scenes of 16x16 features,
targets at 64x64. The same held-out scenes are scored by peak-in-region
accuracy at two confidence thresholds.
"""

from dataclasses import replace

from affordmap import run_eval
from affordmap.experiment import RunConfig, build_data, train_run

run = RunConfig()
run = replace(run, train=replace(run.train, total_steps=400, warmup_steps=50, eval_interval=100))
data = build_data(run)
print(f"{len(data.train_set)} train / {len(data.cases)} held-out scenes")

for kind in ("ahd", "bilinear"):
    params, curve = train_run(run, kind, data)
    for pt in curve:
        print(f"  {kind:9s} step {pt.step:4d}  lr {pt.lr:.4f}  train {pt.train_bce:.4f}  held-out {pt.eval_bce:.4f}")
    for tau in (0.0, 0.5):
        rep = run_eval(params, data.cases, tau)
        acting = "n/a" if rep.accuracy_non_refused is None else f"{rep.accuracy_non_refused:.3f}"
        print(f"  tau={tau}: accuracy {rep.accuracy:.3f}, refused {rep.refusals}, accuracy when acting {acting}")
