#!/usr/bin/env python3
"""Tiny end-to-end run: synthesize clips, train briefly, evaluate, plot.

A fast miniature of the full experiment (small dataset, short schedule, a
learning rate scaled up to match) — expect it to take a minute or two on a
laptop. Writes artifacts into demos_out/.
"""

import os

import numpy as np

from tyrppg.cli import main
from tyrppg.containers import load_clip
from tyrppg.model import forward, load_model
from tyrppg.signal import DEFAULT_GRID, bandpass, estimate_hr, periodogram

OUT = "demos_out"
data_dir = os.path.join(OUT, "data")
run_dir = os.path.join(OUT, "run")
plot_dir = os.path.join(OUT, "plots")

# 1. synthesize a small dataset (the CLI is just a thin wrapper around the API)
assert main(["synth", "--clips", "16", "--frames", "120", "--seed", "11",
             "-o", data_dir]) == 0

# 2. a short training run
assert main(["train", "--data", data_dir, "--epochs", "8", "--lr", "1e-3",
             "--batch-size", "2", "--loss", "csl", "--seed", "0",
             "-o", run_dir]) == 0

# 3. evaluate the checkpoint on the whole dataset
assert main(["eval", "--checkpoint", os.path.join(run_dir, "checkpoint.tyk"),
             "--data", data_dir, "-o", os.path.join(OUT, "eval")]) == 0

# 4. overlay the model's BVP estimate on one held-out clip
clip_path = os.path.join(data_dir, "clip_0015.tyc")
assert main(["plot", "--clip", clip_path,
             "--checkpoint", os.path.join(run_dir, "checkpoint.tyk"),
             "-o", plot_dir]) == 0

# 5. the same readout by hand, to show what the files contain
clip = load_clip(clip_path)
params, cfg, _ = load_model(os.path.join(run_dir, "checkpoint.tyk"))
bvp, logits = forward(clip, params, cfg)
trace = bandpass(bvp.data, clip.fs, *DEFAULT_GRID.band_hz)
hr = estimate_hr(periodogram(trace, clip.fs), DEFAULT_GRID)
head_hr = DEFAULT_GRID.centers_bpm[int(np.argmax(logits.data))]
print(f"\nclip truth {clip.gt_hr_bpm:.1f} bpm | PSD readout {hr:.1f} bpm | "
      f"classification head {head_hr:.1f} bpm")
print(f"artifacts in {OUT}/: dataset, checkpoint, report.json, metrics.csv, SVG plots")
