"""Raw frame sequences -> the two streams the network consumes.

The motion stream is the normalized difference of consecutive frames (robust
to multiplicative illumination); the appearance stream is a standardized copy
of the frames that feeds the attention branch. Both pass through the same
crop/pool stem.

All functions here are pure and operate on plain float64 arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "VideoClip",
    "normalized_frame_diff",
    "standardize_frames",
    "standardize_appearance",
    "frame_stem",
    "draw_stem_augment",
]


@dataclass
class VideoClip:
    """A (T, C, H, W) frame block in [0, 1] with its ground truth.

    fs is the sampling rate in Hz; gt_bvp is the aligned blood-volume-pulse
    trace (length T, arbitrary units); gt_hr_bpm the clip's heart rate.
    """

    frames: np.ndarray
    fs: float
    gt_bvp: np.ndarray | None = None
    gt_hr_bpm: float | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4:
            raise ValueError(f"frames must be (T, C, H, W), got shape {self.frames.shape}")
        if self.frames.shape[0] < 2:
            raise ValueError(f"a clip needs at least 2 frames, got {self.frames.shape[0]}")
        if self.fs <= 0:
            raise ValueError(f"sampling rate must be positive, got {self.fs}")
        if self.gt_bvp is not None:
            self.gt_bvp = np.asarray(self.gt_bvp, dtype=np.float64)
            if self.gt_bvp.shape != (self.frames.shape[0],):
                raise ValueError(
                    f"gt_bvp length {self.gt_bvp.shape} does not match T={self.frames.shape[0]}"
                )

    @property
    def n_frames(self):
        return self.frames.shape[0]


def normalized_frame_diff(clip, eps=1e-8):
    """Per-pixel (x[t+1] - x[t]) / (x[t+1] + x[t] + eps), shape (T-1, C, H, W).

    Output is bounded in [-1, 1] for non-negative frames and eps >= 0. Exact
    zero denominators (possible when eps == 0) yield 0 rather than NaN.
    """
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    frames = clip.frames
    if frames.shape[0] < 2:
        raise ValueError("normalized_frame_diff needs at least 2 frames")
    if frames.min() < 0:
        raise ValueError("frames must be non-negative")
    a, b = frames[:-1], frames[1:]
    num = b - a
    den = b + a + eps
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den != 0)
    return out


def standardize_frames(frames):
    """Zero mean, unit variance per channel over the whole block.

    The variance is floored at 1e-8, so constant channels map to zeros.
    """
    mu = frames.mean(axis=(0, 2, 3), keepdims=True)
    var = frames.var(axis=(0, 2, 3), keepdims=True)
    std = np.sqrt(np.maximum(var, 1e-8))
    return (frames - mu) / std


def standardize_appearance(clip):
    """Standardized copy of the clip's frames (appearance branch input)."""
    return standardize_frames(clip.frames)


def draw_stem_augment(rng, input_hw, crop_hw):
    """Draw one (off_y, off_x, flip) augmentation for frame_stem."""
    h, w = input_hw
    ch, cw = crop_hw
    off_y = int(rng.integers(0, h - ch + 1))
    off_x = int(rng.integers(0, w - cw + 1))
    flip = bool(rng.integers(0, 2))
    return off_y, off_x, flip


def frame_stem(x, target_hw, pool=2, rng=None, offsets=None, flip=False):
    """Crop then average-pool a (T, C, H, W) block down to target_hw.

    Deterministic center crop by default. Passing `rng` draws a seeded random
    crop and horizontal flip (training augmentation); `offsets`/`flip` apply a
    pre-drawn augmentation instead, so several streams can share one draw.
    pool=1 disables pooling (target == input is then the identity).
    """
    th, tw = target_hw
    t, c, h, w = x.shape
    ch, cw = th * pool, tw * pool
    if ch > h or cw > w:
        raise ValueError(f"crop {ch}x{cw} (target {th}x{tw}, pool {pool}) exceeds input {h}x{w}")
    if rng is not None:
        oy, ox, flip = draw_stem_augment(rng, (h, w), (ch, cw))
        offsets = (oy, ox)
    if offsets is None:
        offsets = ((h - ch) // 2, (w - cw) // 2)
    oy, ox = offsets
    out = x[:, :, oy : oy + ch, ox : ox + cw]
    if flip:
        out = out[:, :, :, ::-1]
    if pool > 1:
        out = out.reshape(t, c, th, pool, tw, pool).mean(axis=(3, 5))
    return np.ascontiguousarray(out)
