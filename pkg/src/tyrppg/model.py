"""The heart-rate network: masked motion stream, temporal channel shifting,
a stack of gated video blocks, and two heads (BVP trace, HR-bin logits).

Layout conventions: public tensors are (T, C, H, W); blocks transpose to
channels-last internally so every projection is a plain last-axis linear.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeMismatch
from . import containers
from .preprocess import (
    draw_stem_augment,
    frame_stem,
    normalized_frame_diff,
    standardize_frames,
)
from .signal import DEFAULT_GRID

__all__ = [
    "TsmConfig",
    "GvbParams",
    "ModelConfig",
    "TyrppgParams",
    "attention_mask",
    "tsm_shift",
    "gvb_forward",
    "forward",
    "init_params",
    "count_parameters",
    "save_model",
    "load_model",
]


@dataclass
class TsmConfig:
    """Temporal shift: the first fraction of channels is delayed one frame,
    the next fraction advanced one frame (zero-filled boundaries).

    When `conv_weights` (a learnable (3,) tensor) is set, the shifted
    channel groups instead mix (w1, w2, w3) over frames {t-1, t, t+1};
    (0, 1, 0) makes the mixing path the identity.
    """

    shift_fraction: float = 0.25
    conv_weights: Tensor | None = None

    def __post_init__(self):
        if not (0.0 < 2.0 * self.shift_fraction <= 1.0):
            raise ValueError(
                f"need 0 < 2*shift_fraction <= 1, got {self.shift_fraction}"
            )


def tsm_shift(x, cfg):
    """Shift channel groups of x (T, C, H, W) along time."""
    x = ad.as_tensor(x)
    c = x.shape[1]
    n = int(cfg.shift_fraction * c)
    if n == 0:
        return x
    fwd, bwd, rest = ad.split(x, [n, n, c - 2 * n], axis=1)
    if cfg.conv_weights is None:
        moved = [ad.time_shift(fwd, +1), ad.time_shift(bwd, -1)]
    else:
        taps = [ad.reshape(t, ()) for t in ad.split(cfg.conv_weights, [1, 1, 1], axis=0)]

        def mix(part):
            prev = ad.mul(ad.time_shift(part, +1), taps[0])
            here = ad.mul(part, taps[1])
            post = ad.mul(ad.time_shift(part, -1), taps[2])
            return ad.add(ad.add(prev, here), post)

        moved = [mix(fwd), mix(bwd)]
    return ad.concat(moved + [rest], axis=1)


def attention_mask(feat):
    """Per-frame normalized attention from a 1-channel map (T, 1, H, W).

    mask = (H/8)(W/8) * sigmoid(feat) / (2 * ||sigmoid(feat)||_1), the L1
    norm taken per frame, so every frame's mask sums to (H/8)(W/8)/2.
    """
    feat = ad.as_tensor(feat)
    if feat.ndim != 4 or feat.shape[1] != 1:
        raise ShapeMismatch("attention_mask", feat.shape, (0, 1, 0, 0), "expects (T, 1, H, W)")
    t, _, h, w = feat.shape
    sg = ad.sigmoid(feat)
    cols = ad.transpose(ad.reshape(sg, (t, h * w)), (1, 0))  # (HW, T)
    norms = ad.sum(cols, axes=0)                             # (T,)
    scale = ad.div((h / 8.0) * (w / 8.0), ad.mul(norms, 2.0))
    masked = ad.mul(cols, scale)
    return ad.reshape(ad.transpose(masked, (1, 0)), (t, 1, h, w))


@dataclass
class GvbParams:
    """Weights of one gated video block.

    The block norms over channels, projects three ways (gate: width D_H;
    bypass: D_H - D_C; conv slice: D_C), convolves the slice, re-joins
    bypass and conv output, gates with sigmoid, projects back to C, and adds
    the residual.
    """

    norm_gamma: Tensor  # (C,)
    norm_beta: Tensor   # (C,)
    w_gate: Tensor      # (C, D_H)
    b_gate: Tensor      # (D_H,)
    w_bypass: Tensor    # (C, D_H - D_C)
    b_bypass: Tensor
    w_conv_in: Tensor   # (C, D_C)
    b_conv_in: Tensor
    conv_kernel: Tensor  # (D_C, D_C, k, k, k)
    w_out: Tensor       # (D_H, C)
    b_out: Tensor       # (C,)

    def __post_init__(self):
        c, dh = self.w_gate.shape
        dc = self.w_conv_in.shape[1]
        if not (dh > dc >= 1):
            raise ValueError(f"need hidden > conv width >= 1, got {dh} and {dc}")
        if self.w_bypass.shape != (c, dh - dc):
            raise ShapeMismatch("GvbParams bypass projection", self.w_bypass.shape, (c, dh - dc))
        if self.w_out.shape != (dh, c):
            raise ShapeMismatch("GvbParams output projection", self.w_out.shape, (dh, c))
        if self.conv_kernel.shape[0] != dc or self.conv_kernel.shape[1] != dc:
            raise ShapeMismatch("GvbParams conv kernel", self.conv_kernel.shape, (dc, dc, 3, 3, 3))

    @property
    def channels(self):
        return self.w_gate.shape[0]

    def parameters(self):
        for f in fields(self):
            yield f.name, getattr(self, f.name)

    @classmethod
    def init(cls, rng, channels, hidden, conv_channels, kernel=3):
        def w(shape, fan):
            return Tensor(rng.standard_normal(shape) / math.sqrt(fan), requires_grad=True)

        def zeros(shape):
            return Tensor(np.zeros(shape), requires_grad=True)

        k3 = kernel**3
        return cls(
            norm_gamma=Tensor(np.ones(channels), requires_grad=True),
            norm_beta=zeros(channels),
            w_gate=w((channels, hidden), channels),
            b_gate=zeros(hidden),
            w_bypass=w((channels, hidden - conv_channels), channels),
            b_bypass=zeros(hidden - conv_channels),
            w_conv_in=w((channels, conv_channels), channels),
            b_conv_in=zeros(conv_channels),
            conv_kernel=w(
                (conv_channels, conv_channels, kernel, kernel, kernel),
                conv_channels * k3,
            ),
            w_out=w((hidden, channels), hidden),
            b_out=zeros(channels),
        )


def gvb_forward(x, p, tsm=None, eps=1e-5, concat_conv_input=False):
    """One gated video block on x (T, C, H, W); returns the same shape.

    When `tsm` is given, the temporal shift applies to the non-residual
    branch only, so a zeroed output projection still makes the block the
    identity. `concat_conv_input` joins the raw conv-slice projection
    instead of the conv output (the literal written form, which leaves the
    convolution dead).
    """
    x = ad.as_tensor(x)
    if x.ndim != 4:
        raise ShapeMismatch("gvb_forward", x.shape, (0, 0, 0, 0), "expects (T, C, H, W)")
    if x.shape[1] != p.channels:
        raise ShapeMismatch("gvb_forward gate projection", x.shape, p.w_gate.shape,
                            "input channels must match the projection rows")
    branch = tsm_shift(x, tsm) if tsm is not None else x
    ht = ad.transpose(branch, (0, 2, 3, 1))  # channels-last
    xn = ad.add(ad.mul(ad.layer_norm(ht, eps=eps, axis=-1), p.norm_gamma), p.norm_beta)
    gate = ad.linear(xn, p.w_gate, p.b_gate)
    bypass = ad.linear(xn, p.w_bypass, p.b_bypass)
    slice_in = ad.linear(xn, p.w_conv_in, p.b_conv_in)
    conv_out = ad.transpose(
        ad.conv3d(ad.transpose(slice_in, (0, 3, 1, 2)), p.conv_kernel),
        (0, 2, 3, 1),
    )
    joined = ad.concat([bypass, slice_in if concat_conv_input else conv_out], axis=3)
    gated = ad.mul(ad.sigmoid(gate), joined)
    out = ad.linear(gated, p.w_out, p.b_out)
    return ad.add(ad.transpose(out, (0, 3, 1, 2)), x)


@dataclass
class ModelConfig:
    """Hyperparameters of the network; the defaults are the desk-scale ones."""

    in_channels: int = 3
    channels: int = 16         # trunk width
    hidden: int = 32           # gate width inside a block
    conv_channels: int = 8     # conv slice width inside a block
    depth: int = 3
    appearance_channels: int = 4
    stem_hw: tuple = (6, 6)
    stem_pool: int = 2
    shift_fraction: float = 0.25
    learnable_shift_taps: bool = False
    tsm_placement: str = "block"  # "block": inside each block; "stem": once after the stem
    norm_eps: float = 1e-5
    concat_conv_input: bool = False
    diff_eps: float = 1e-8

    def __post_init__(self):
        self.stem_hw = tuple(self.stem_hw)
        if self.tsm_placement not in ("block", "stem"):
            raise ValueError(f'tsm_placement must be "block" or "stem", got {self.tsm_placement!r}')
        if not (self.hidden > self.conv_channels >= 1):
            raise ValueError("need hidden > conv_channels >= 1")
        if self.depth < 1:
            raise ValueError("need depth >= 1")


@dataclass
class TyrppgParams:
    """All learnable weights of the network, addressable by dotted name."""

    app_conv1: Tensor          # (A, C_in, 3, 3, 3)
    app_conv2: Tensor          # (A, A, 3, 3, 3)
    app_proj_w: Tensor         # (A, 1)
    app_proj_b: Tensor         # (1,)
    stem_w: Tensor             # (C_in, C)
    stem_b: Tensor             # (C,)
    tsm: TsmConfig
    blocks: list = field(default_factory=list)
    bvp_w: Tensor = None       # (C, 1)
    bvp_b: Tensor = None       # (1,)
    hr_w: Tensor = None        # (C, K)
    hr_b: Tensor = None        # (K,)

    def parameters(self):
        """Yield (dotted name, tensor) for every learnable weight."""
        for name in ("app_conv1", "app_conv2", "app_proj_w", "app_proj_b",
                     "stem_w", "stem_b"):
            yield name, getattr(self, name)
        if self.tsm.conv_weights is not None:
            yield "tsm.conv_weights", self.tsm.conv_weights
        for i, blk in enumerate(self.blocks):
            for name, tensor in blk.parameters():
                yield f"blocks.{i}.{name}", tensor
        for name in ("bvp_w", "bvp_b", "hr_w", "hr_b"):
            yield name, getattr(self, name)

    def tensors(self):
        return [t for _, t in self.parameters()]


def init_params(cfg=ModelConfig(), n_bins=DEFAULT_GRID.n_bins, seed=0):
    """Seeded initialization: 1/sqrt(fan-in) Gaussians for the trunk, zeros
    for both heads (an untrained model emits exactly zero BVP and logits)."""
    rng = np.random.default_rng(seed)

    def w(shape, fan):
        return Tensor(rng.standard_normal(shape) / math.sqrt(fan), requires_grad=True)

    def zeros(shape):
        return Tensor(np.zeros(shape), requires_grad=True)

    a, cin, c = cfg.appearance_channels, cfg.in_channels, cfg.channels
    taps = Tensor(np.array([0.0, 1.0, 0.0]), requires_grad=True) if cfg.learnable_shift_taps else None
    # Appearance needs per-frame spatial context only, so its convs are
    # spatial (1, 3, 3) kernels; temporal mixing lives in the motion trunk.
    return TyrppgParams(
        app_conv1=w((a, cin, 1, 3, 3), cin * 9),
        app_conv2=w((a, a, 1, 3, 3), a * 9),
        app_proj_w=w((a, 1), a),
        app_proj_b=zeros(1),
        stem_w=w((cin, c), cin),
        stem_b=zeros(c),
        tsm=TsmConfig(shift_fraction=cfg.shift_fraction, conv_weights=taps),
        blocks=[
            GvbParams.init(rng, c, cfg.hidden, cfg.conv_channels)
            for _ in range(cfg.depth)
        ],
        bvp_w=zeros((c, 1)),
        bvp_b=zeros(1),
        hr_w=zeros((c, n_bins)),
        hr_b=zeros(n_bins),
    )


def count_parameters(params):
    return int(np.sum([t.size for t in params.tensors()]))


def forward(clip, params, cfg=ModelConfig(), rng=None):
    """Run the network on one clip.

    Returns (bvp, logits): the BVP trace lives in the frame-difference
    domain (length T-1); logits cover the HR bin grid. Passing `rng` enables
    the seeded crop/flip augmentation, with one draw shared by the motion
    and appearance streams.
    """
    diff = normalized_frame_diff(clip, eps=cfg.diff_eps)
    appearance = standardize_frames(0.5 * (clip.frames[:-1] + clip.frames[1:]))
    stem_kw = {}
    if rng is not None:
        crop = (cfg.stem_hw[0] * cfg.stem_pool, cfg.stem_hw[1] * cfg.stem_pool)
        oy, ox, flip = draw_stem_augment(rng, diff.shape[2:], crop)
        stem_kw = {"offsets": (oy, ox), "flip": flip}
    motion = Tensor(frame_stem(diff, cfg.stem_hw, pool=cfg.stem_pool, **stem_kw))
    app = Tensor(frame_stem(appearance, cfg.stem_hw, pool=cfg.stem_pool, **stem_kw))

    feat = ad.tanh(ad.conv3d(app, params.app_conv1))
    feat = ad.tanh(ad.conv3d(feat, params.app_conv2))
    feat = ad.transpose(
        ad.linear(ad.transpose(feat, (0, 2, 3, 1)), params.app_proj_w, params.app_proj_b),
        (0, 3, 1, 2),
    )
    mask = attention_mask(feat)
    mask_c = ad.concat([mask] * cfg.in_channels, axis=1)

    x = ad.mul(motion, mask_c)
    x = ad.transpose(
        ad.linear(ad.transpose(x, (0, 2, 3, 1)), params.stem_w, params.stem_b),
        (0, 3, 1, 2),
    )
    if cfg.tsm_placement == "stem":
        x = tsm_shift(x, params.tsm)
    block_tsm = params.tsm if cfg.tsm_placement == "block" else None
    for blk in params.blocks:
        x = gvb_forward(x, blk, tsm=block_tsm, eps=cfg.norm_eps,
                        concat_conv_input=cfg.concat_conv_input)

    pooled_t = ad.avg_pool_spatial(x)                        # (T-1, C)
    bvp = ad.reshape(ad.linear(pooled_t, params.bvp_w, params.bvp_b), (diff.shape[0],))
    pooled = ad.mean(pooled_t, axes=0)                       # (C,)
    logits = ad.linear(pooled, params.hr_w, params.hr_b)
    return bvp, logits


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _cfg_to_manifest(cfg):
    d = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        d[f.name] = list(v) if isinstance(v, tuple) else v
    return d


def save_model(path, params, cfg, seed=None, epoch=None, extra=None):
    manifest = {"model": _cfg_to_manifest(cfg), "seed": seed, "epoch": epoch}
    if extra:
        manifest.update(extra)
    tensors = {name: t.data for name, t in params.parameters()}
    containers.save_checkpoint(path, manifest, tensors)


def load_model(path):
    """Returns (params, cfg, manifest); all weights require grad."""
    manifest, tensors = containers.load_checkpoint(path)
    cfg = ModelConfig(**manifest["model"])

    def t(name):
        return Tensor(tensors[name], requires_grad=True)

    taps = t("tsm.conv_weights") if "tsm.conv_weights" in tensors else None
    blocks = []
    for i in range(cfg.depth):
        kw = {}
        for f in fields(GvbParams):
            kw[f.name] = t(f"blocks.{i}.{f.name}")
        blocks.append(GvbParams(**kw))
    params = TyrppgParams(
        app_conv1=t("app_conv1"),
        app_conv2=t("app_conv2"),
        app_proj_w=t("app_proj_w"),
        app_proj_b=t("app_proj_b"),
        stem_w=t("stem_w"),
        stem_b=t("stem_b"),
        tsm=TsmConfig(shift_fraction=cfg.shift_fraction, conv_weights=taps),
        blocks=blocks,
        bvp_w=t("bvp_w"),
        bvp_b=t("bvp_b"),
        hr_w=t("hr_w"),
        hr_b=t("hr_b"),
    )
    return params, cfg, manifest
