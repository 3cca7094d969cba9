"""Finite-difference verification of every differentiable op and loss.

Each case builds a scalar function of one input tensor (weighted sums turn
vector outputs into scalars with non-trivial cotangents) and compares the
tape's gradient against central differences via grad_check. The network case
instead perturbs randomly chosen parameters through the full forward pass
and the comprehensive loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .losses import (
    KernelConfig,
    LossWeights,
    cross_entropy_loss,
    csl,
    mmd2_pmf,
    pearson_loss,
    video_mmd_loss,
    wsl,
)
from .model import GvbParams, ModelConfig, TsmConfig, attention_mask, forward, gvb_forward, init_params, tsm_shift
from .preprocess import VideoClip
from .signal import HrBinGrid

__all__ = ["GradCase", "run_gradient_suite", "check_network_gradients", "format_table"]

OP_TOLERANCE = 1e-5
NETWORK_TOLERANCE = 1e-4


@dataclass
class GradCase:
    name: str
    worst: float
    tolerance: float
    seeds: int

    @property
    def passed(self):
        return self.worst < self.tolerance


def _shape(rng, ndim=None, lo=1, hi=4):
    if ndim is None:
        ndim = int(rng.integers(1, 5))
    return tuple(int(rng.integers(lo, hi + 1)) for _ in range(ndim))


def _scalarize(f_raw, x0, rng):
    """Wrap a tensor-valued function with a fixed random cotangent so the
    result is a pure scalar function (grad_check requires purity)."""
    probe = f_raw(Tensor(x0.data.copy()))
    w = Tensor(rng.standard_normal(probe.shape))

    def f(x):
        return ad.sum(ad.mul(f_raw(x), w))

    return f


def _spread(rng, shape, axis=-1):
    """Random values with guaranteed spread along `axis` (layer_norm inputs)."""
    x = rng.standard_normal(shape)
    ramp = np.arange(shape[axis]) * 0.7
    return x + np.moveaxis(np.broadcast_to(ramp, np.moveaxis(x, axis, -1).shape), -1, axis)


def _op_cases():
    """name -> builder(rng) -> (raw tensor function, x0).

    Shapes stay <= 4 per axis; the runner fixes a random cotangent to make
    each function scalar-valued.
    """

    def bin_case(op, partner):
        def build(rng):
            shape = _shape(rng)
            c = Tensor(partner(rng, shape))
            return (lambda x: op(x, c)), Tensor(rng.standard_normal(shape))
        return build

    def randn(rng, shape):
        return rng.standard_normal(shape)

    def away_from_zero(rng, shape):
        return (0.5 + np.abs(rng.standard_normal(shape))) * np.sign(rng.standard_normal(shape))

    def unary_case(op, domain=None):
        def build(rng):
            shape = _shape(rng)
            x = rng.standard_normal(shape)
            if domain == "positive":
                x = 0.5 + np.abs(x)
            return op, Tensor(x)
        return build

    def matmul_lhs(rng):
        a, b, c = (int(rng.integers(1, 5)) for _ in range(3))
        w = Tensor(rng.standard_normal((b, c)))
        return (lambda x: ad.matmul(x, w)), Tensor(rng.standard_normal((a, b)))

    def matmul_rhs(rng):
        a, b, c = (int(rng.integers(1, 5)) for _ in range(3))
        lhs = Tensor(rng.standard_normal((a, b)))
        return (lambda x: ad.matmul(lhs, x)), Tensor(rng.standard_normal((b, c)))

    def linear_bias(rng):
        a, b, c = 3, int(rng.integers(1, 5)), int(rng.integers(1, 5))
        xc = Tensor(rng.standard_normal((a, b)))
        w = Tensor(rng.standard_normal((b, c)))
        return (lambda t: ad.linear(xc, w, t)), Tensor(rng.standard_normal(c))

    def conv_input(rng):
        t, ci, co = int(rng.integers(2, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
        h, w = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        k = Tensor(rng.standard_normal((co, ci, 3, 3, 3)))
        return (lambda x: ad.conv3d(x, k)), Tensor(rng.standard_normal((t, ci, h, w)))

    def conv_kernel(rng):
        t, ci, co = int(rng.integers(2, 4)), int(rng.integers(1, 3)), int(rng.integers(1, 3))
        h, w = int(rng.integers(2, 4)), int(rng.integers(2, 4))
        x = Tensor(rng.standard_normal((t, ci, h, w)))
        return (lambda k: ad.conv3d(x, k)), Tensor(rng.standard_normal((co, ci, 3, 3, 3)))

    def layer_norm_case(rng):
        shape = _shape(rng, lo=2)
        axis = int(rng.integers(0, len(shape)))
        eps = float(rng.choice([1e-5, 1e-3]))
        return (lambda x: ad.layer_norm(x, eps=eps, axis=axis)), Tensor(
            _spread(rng, shape, axis)
        )

    def softmax_case(rng):
        shape = _shape(rng)
        axis = int(rng.integers(0, len(shape)))
        return (lambda x: ad.softmax(x, axis=axis)), Tensor(rng.standard_normal(shape))

    def concat_case(rng):
        shape = _shape(rng, ndim=3)
        axis = int(rng.integers(0, 3))
        c = Tensor(rng.standard_normal(shape))
        return (lambda x: ad.concat([x, c, x], axis=axis)), Tensor(rng.standard_normal(shape))

    def split_case(rng):
        n = int(rng.integers(2, 5))
        shape = (n, int(rng.integers(1, 5)))
        cut = int(rng.integers(1, n))

        def f(x):
            parts = ad.split(x, [cut, n - cut], axis=0)
            return ad.concat(parts, axis=0)

        return f, Tensor(rng.standard_normal(shape))

    def reduce_case(op):
        def build(rng):
            shape = _shape(rng, ndim=3)
            pick = int(rng.integers(0, 4))
            axes = None if pick == 3 else (pick,)
            return (lambda x: op(x, axes)), Tensor(rng.standard_normal(shape))
        return build

    def amax_case(rng):
        shape = _shape(rng)
        return ad.amax, Tensor(rng.standard_normal(shape))

    def pool_case(rng):
        shape = (3, 2, int(rng.integers(1, 5)), int(rng.integers(1, 5)))
        return ad.avg_pool_spatial, Tensor(rng.standard_normal(shape))

    def transpose_case(rng):
        shape = _shape(rng, ndim=3)
        perm = tuple(int(v) for v in rng.permutation(3))
        return (lambda x: ad.transpose(x, perm)), Tensor(rng.standard_normal(shape))

    def reshape_case(rng):
        a, b = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        return (lambda x: ad.reshape(x, (b, a))), Tensor(rng.standard_normal((a, b)))

    def time_shift_case(rng):
        shape = _shape(rng, ndim=3, lo=2)
        delta = int(rng.choice([-1, 1]))
        return (lambda x: ad.time_shift(x, delta, axis=0)), Tensor(rng.standard_normal(shape))

    def tsm_case(rng):
        x = rng.standard_normal((4, 4, 2, 2))
        taps = Tensor(rng.standard_normal(3))
        cfg = TsmConfig(shift_fraction=0.25, conv_weights=taps)
        return (lambda t: tsm_shift(t, cfg)), Tensor(x)

    def tsm_taps_case(rng):
        x = Tensor(rng.standard_normal((4, 4, 2, 2)))

        def f(taps):
            return tsm_shift(x, TsmConfig(shift_fraction=0.25, conv_weights=taps))

        return f, Tensor(rng.standard_normal(3))

    def mask_case(rng):
        return attention_mask, Tensor(rng.standard_normal((3, 1, 4, 4)))

    def gvb_case(rng):
        p = GvbParams.init(rng, channels=4, hidden=8, conv_channels=2)
        return (lambda x: gvb_forward(x, p)), Tensor(rng.standard_normal((3, 4, 3, 3)))

    grid = HrBinGrid(40.0, 180.0, 5.0)  # 28 bins keeps the loss cases quick

    def pearson_case(rng):
        n = int(rng.integers(6, 16))
        gt = Tensor(rng.standard_normal(n))
        return (lambda x: pearson_loss(x, gt)), Tensor(rng.standard_normal(n))

    def ce_case(rng):
        k = int(rng.integers(3, 9))
        target = int(rng.integers(0, k))
        return (lambda x: cross_entropy_loss(x, target)), Tensor(rng.standard_normal(k))

    def mmd_case(rng):
        q = rng.uniform(0.1, 1.0, grid.n_bins)
        q = Tensor(q / q.sum())

        def f(x):
            return mmd2_pmf(ad.softmax(x, axis=0), q, grid, KernelConfig(bandwidth_bpm=6.0))

        return f, Tensor(rng.standard_normal(grid.n_bins))

    def _tone(rng, n, fs=30.0):
        hr = rng.uniform(50.0, 150.0)
        t = np.arange(n) / fs
        return np.sin(2 * np.pi * (hr / 60.0) * t + rng.uniform(0, 2 * np.pi))

    def video_mmd_case(rng):
        n = 16
        gt = Tensor(_tone(rng, n))

        def f(x):
            return video_mmd_loss(x, gt, fs=30.0, grid=grid, sigma_bpm=5.0)

        return f, Tensor(_tone(rng, n) + 0.1 * rng.standard_normal(n))

    def csl_case(rng):
        n = 16
        gt = Tensor(_tone(rng, n))
        logits = Tensor(rng.standard_normal(grid.n_bins))
        target = int(rng.integers(0, grid.n_bins))

        def f(x):
            return csl(x, gt, logits, target, LossWeights(), fs=30.0, grid=grid, sigma_bpm=5.0)

        return f, Tensor(_tone(rng, n) + 0.1 * rng.standard_normal(n))

    def wsl_case(rng):
        n = 16
        gt = Tensor(_tone(rng, n))

        def f(x):
            return wsl(x, gt, LossWeights(), fs=30.0, grid=grid, sigma_bpm=5.0)

        return f, Tensor(_tone(rng, n) + 0.1 * rng.standard_normal(n))

    return {
        "add": bin_case(ad.add, randn),
        "sub": bin_case(ad.sub, randn),
        "mul": bin_case(ad.mul, randn),
        "div": bin_case(ad.div, away_from_zero),
        "matmul (lhs)": matmul_lhs,
        "matmul (rhs)": matmul_rhs,
        "linear (bias)": linear_bias,
        "conv3d (input)": conv_input,
        "conv3d (kernel)": conv_kernel,
        "layer_norm": layer_norm_case,
        "sigmoid": unary_case(ad.sigmoid),
        "tanh": unary_case(ad.tanh),
        "exp": unary_case(ad.exp),
        "log": unary_case(ad.log, domain="positive"),
        "sqrt": unary_case(ad.sqrt, domain="positive"),
        "softmax": softmax_case,
        "concat": concat_case,
        "split": split_case,
        "sum": reduce_case(ad.sum),
        "mean": reduce_case(ad.mean),
        "amax": amax_case,
        "avg_pool_spatial": pool_case,
        "transpose": transpose_case,
        "reshape": reshape_case,
        "time_shift": time_shift_case,
        "tsm_shift": tsm_case,
        "tsm_shift (taps)": tsm_taps_case,
        "attention_mask": mask_case,
        "gvb_forward": gvb_case,
        "pearson_loss": pearson_case,
        "cross_entropy_loss": ce_case,
        "mmd2": mmd_case,
        "video_mmd_loss": video_mmd_case,
        "csl": csl_case,
        "wsl": wsl_case,
    }


def check_network_gradients(seed, n_coords=10, h=1e-6):
    """FD check of the comprehensive loss through the whole network.

    Perturbs `n_coords` randomly chosen parameter coordinates; returns the
    max relative error against the tape's gradients.

    The step is smaller than the per-op checks use: the first layer norm
    runs in its eps-floor regime (the masked motion stream is ~1e-4 scale),
    which makes the loss stiff along stem coordinates, and h=1e-5 central
    differences would show pure truncation error there.

    The loss is differentiable almost everywhere but has a subgradient kink
    where the band-power argmax (the softmax temperature's scale) is tied;
    central differences are meaningless across a kink, so coordinates whose
    +-h step flips that argmax are redrawn (they are detected exactly by
    recomputing the argmax at the perturbed points).
    """
    from .losses import _psd_constants

    rng = np.random.default_rng(seed)
    grid = HrBinGrid()
    cfg = ModelConfig()
    t_frames = 10  # difference stream keeps >= 8 samples for the PSD
    frames = rng.uniform(0.1, 0.9, (t_frames, 3, 16, 16))
    hr = float(rng.uniform(50.0, 150.0))
    tt = np.arange(t_frames) / 30.0
    bvp = np.sin(2 * np.pi * hr / 60.0 * tt)
    clip = VideoClip(frames=frames, fs=30.0, gt_bvp=bvp, gt_hr_bpm=hr)
    params = init_params(cfg, n_bins=grid.n_bins, seed=rng.integers(1 << 31))
    # Zero heads give zero gradients for most of the net; nudge them.
    for t in (params.bvp_w, params.bvp_b, params.hr_w, params.hr_b):
        t.data += rng.standard_normal(t.data.shape) * 0.1
    named = list(params.parameters())
    window, cos_m, sin_m, _ = _psd_constants(t_frames - 1, 30.0, grid, 2.0)

    def loss_value():
        pred, logits = forward(clip, params, cfg)
        loss = csl(pred, np.diff(bvp), logits, grid.index_of(hr), LossWeights(),
                   fs=30.0, grid=grid)
        xw = (pred.data - pred.data.mean()) * window
        power = (xw @ cos_m) ** 2 + (xw @ sin_m) ** 2
        return loss, int(np.argmax(power))

    loss, base_peak = loss_value()
    ad.backward(loss)
    grads = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
             for name, t in named}

    worst = 0.0
    checked = 0
    attempts = 0
    while checked < n_coords and attempts < 8 * n_coords:
        attempts += 1
        name, tensor = named[int(rng.integers(0, len(named)))]
        flat = tensor.data.reshape(-1)
        i = int(rng.integers(0, flat.size))
        orig = flat[i]
        flat[i] = orig + h
        fp, peak_p = loss_value()
        flat[i] = orig - h
        fm, peak_m = loss_value()
        flat[i] = orig
        if peak_p != base_peak or peak_m != base_peak:
            continue  # the step crossed the argmax kink; FD is undefined there
        numeric = (fp.item() - fm.item()) / (2.0 * h)
        analytic = grads[name].reshape(-1)[i]
        err = abs(analytic - numeric) / max(1.0, abs(analytic))
        worst = max(worst, err)
        checked += 1
    return worst


def run_gradient_suite(n_seeds=100, h=1e-5, include_network=True, base_seed=1234):
    """Run every case over n_seeds random draws; returns a list of GradCase."""
    results = []
    for name, builder in _op_cases().items():
        worst = 0.0
        for s in range(n_seeds):
            rng = np.random.default_rng(base_seed + s)
            f_raw, x = builder(rng)
            worst = max(worst, grad_check(_scalarize(f_raw, x, rng), x, h=h))
        results.append(GradCase(name, worst, OP_TOLERANCE, n_seeds))
    if include_network:
        worst = 0.0
        for s in range(n_seeds):
            worst = max(worst, check_network_gradients(base_seed + s, n_coords=10))
        results.append(GradCase("full network (csl)", worst, NETWORK_TOLERANCE, n_seeds))
    return results


def format_table(results):
    lines = [f"{'case':<24} {'max rel err':>12} {'tolerance':>10}  result"]
    for r in results:
        lines.append(
            f"{r.name:<24} {r.worst:>12.3e} {r.tolerance:>10.0e}  "
            f"{'PASS' if r.passed else 'FAIL'}"
        )
    return "\n".join(lines)
