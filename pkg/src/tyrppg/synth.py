"""Synthetic pulsatile video: a desk-scale stand-in for real rPPG datasets.

Each clip contains a face-like Gaussian blob whose intensity pulses with a
skewed waveform at a per-clip heart rate, under three adversaries the
pipeline is built to survive: a multiplicative illumination ramp (cancelled
by the normalized frame difference), white sensor noise, and per-frame
translation jitter (handled by the attention mask). Ground-truth BVP and HR
are recorded exactly.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import containers
from .preprocess import VideoClip
from .signal import DEFAULT_GRID

__all__ = ["SynthConfig", "synth_dataset", "save_dataset", "load_dataset"]

# Reflectance per RGB channel and relative pulse strength (green dominates,
# as in skin).
_BASE_COLOR = np.array([0.55, 0.45, 0.40])
_PULSE_COLOR = np.array([0.5, 1.0, 0.7])
_HARMONIC = 0.2  # second-harmonic amplitude of the skewed pulse; differencing
# doubles its relative amplitude, so it must stay well below 0.5


@dataclass
class SynthConfig:
    n_clips: int = 80
    n_frames: int = 120
    height: int = 16
    width: int = 16
    fs: float = 30.0
    hr_range_bpm: tuple = (50.0, 150.0)
    pulse_amplitude: float = 0.12
    noise_sigma: float = 0.015
    illumination_drift_amplitude: float = 0.15
    motion_jitter_px: int = 1
    seed: int = 0

    def __post_init__(self):
        self.hr_range_bpm = tuple(self.hr_range_bpm)
        if self.n_frames < 2:
            raise ValueError("need at least 2 frames per clip")
        for name in ("pulse_amplitude", "noise_sigma", "illumination_drift_amplitude"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.motion_jitter_px < 0:
            raise ValueError("motion_jitter_px must be non-negative")


def pulse_waveform(theta):
    """Skewed periodic pulse; the fundamental dominates the spectrum."""
    return np.sin(theta) + _HARMONIC * np.sin(2.0 * theta + 1.0)


def _make_clip(cfg, rng):
    t_idx = np.arange(cfg.n_frames)
    time = t_idx / cfg.fs
    hr = float(rng.uniform(*cfg.hr_range_bpm))
    phase = float(rng.uniform(0.0, 2.0 * np.pi))
    theta = 2.0 * np.pi * (hr / 60.0) * time + phase
    bvp = pulse_waveform(theta)

    yy, xx = np.mgrid[0 : cfg.height, 0 : cfg.width]
    radius = 0.30 * min(cfg.height, cfg.width)
    j = cfg.motion_jitter_px
    if j > 0:
        jitter = rng.integers(-j, j + 1, size=(cfg.n_frames, 2))
    else:
        jitter = np.zeros((cfg.n_frames, 2), dtype=int)
    cy = (cfg.height - 1) / 2.0 + jitter[:, 0]
    cx = (cfg.width - 1) / 2.0 + jitter[:, 1]
    d2 = (yy[None] - cy[:, None, None]) ** 2 + (xx[None] - cx[:, None, None]) ** 2
    blob = np.exp(-d2 / (2.0 * radius * radius))  # (T, H, W)

    drift = 1.0 + cfg.illumination_drift_amplitude * np.linspace(-1.0, 1.0, cfg.n_frames)
    modulation = 1.0 + cfg.pulse_amplitude * (
        _PULSE_COLOR[None, :, None, None] * bvp[:, None, None, None] * blob[:, None]
    )
    frames = drift[:, None, None, None] * _BASE_COLOR[None, :, None, None] * modulation
    if cfg.noise_sigma > 0:
        frames = frames + rng.normal(0.0, cfg.noise_sigma, size=frames.shape)
    frames = np.clip(frames, 0.0, 1.0)
    return VideoClip(frames=frames, fs=cfg.fs, gt_bvp=bvp, gt_hr_bpm=hr)


def synth_dataset(cfg, grid=DEFAULT_GRID):
    """Generate cfg.n_clips clips; byte-deterministic for a fixed seed."""
    lo, hi = cfg.hr_range_bpm
    if not (grid.lo_bpm <= lo < hi <= grid.hi_bpm):
        raise ValueError(
            f"hr_range {cfg.hr_range_bpm} must lie inside the HR band "
            f"[{grid.lo_bpm}, {grid.hi_bpm}] bpm"
        )
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_clips)
    return [_make_clip(cfg, np.random.default_rng(s)) for s in streams]


def save_dataset(clips, out_dir, cfg=None):
    """Write one TYC1 file per clip plus an index manifest; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for i, clip in enumerate(clips):
        name = f"clip_{i:04d}.tyc"
        containers.save_clip(os.path.join(out_dir, name), clip)
        names.append(name)
    manifest = {"format": "TYC1", "count": len(names), "files": names}
    if cfg is not None:
        manifest["config"] = asdict(cfg)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return names


def load_dataset(in_dir):
    with open(os.path.join(in_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    return [containers.load_clip(os.path.join(in_dir, n)) for n in manifest["files"]]
