"""Supervision stack for the heart-rate model.

Three ingredients, combined by weighted sums:

* cross-entropy on HR-bin logits (signal details),
* negative Pearson correlation on the BVP waveform (trend similarity),
* a video-MMD between PSD-anchored distributions on the HR bin grid
  (distribution dissimilarity; finite and smooth where KL divergence blows
  up on disjoint supports — a KL baseline is included for comparison).

The full combination is the comprehensive loss; dropping the cross-entropy
term gives the weak variant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .signal import DEFAULT_GRID, estimate_hr, max_gaussian, periodogram

__all__ = [
    "LossWeights",
    "KernelConfig",
    "pearson_loss",
    "cross_entropy_loss",
    "mmd2",
    "mmd2_pmf",
    "rbf_kernel_matrix",
    "kl_divergence",
    "kl_divergence_smoothed",
    "soft_hr_distribution",
    "video_mmd_loss",
    "csl",
    "wsl",
]

_VAR_GUARD = 1e-8


@dataclass(frozen=True)
class LossWeights:
    """Term weights (cross-entropy, Pearson, video-MMD)."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 2.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


@dataclass(frozen=True)
class KernelConfig:
    """RBF kernel over bin centers, k(a, b) = exp(-(a-b)^2 / (2 bw^2))."""

    bandwidth_bpm: float = 3.0
    kind: str = "rbf"

    def __post_init__(self):
        if self.kind != "rbf":
            raise ValueError(f"only the rbf kernel is supported, got {self.kind!r}")
        if not (math.isfinite(self.bandwidth_bpm) and self.bandwidth_bpm > 0):
            raise ValueError(f"bandwidth must be finite and positive, got {self.bandwidth_bpm}")


def pearson_loss(pred, gt):
    """1 - Pearson correlation between two equal-length traces.

    Differentiable through `pred`; invariant (up to the 1e-8 variance guard)
    to positive affine transforms of either side. Range [0, 2].
    """
    pred, gt = ad.as_tensor(pred), ad.as_tensor(gt)
    n = pred.size
    if n < 2:
        raise ValueError(f"pearson_loss needs at least 2 samples, got {n}")
    if gt.size != n:
        raise ValueError(f"length mismatch: pred {n}, gt {gt.size}")
    t = float(n)
    sx = ad.sum(pred)
    sy = ad.sum(gt)
    sxy = ad.sum(ad.mul(pred, gt))
    sxx = ad.sum(ad.mul(pred, pred))
    syy = ad.sum(ad.mul(gt, gt))
    num = ad.sub(ad.mul(sxy, t), ad.mul(sx, sy))
    vx = ad.add(ad.sub(ad.mul(sxx, t), ad.mul(sx, sx)), _VAR_GUARD)
    vy = ad.add(ad.sub(ad.mul(syy, t), ad.mul(sy, sy)), _VAR_GUARD)
    corr = ad.div(num, ad.sqrt(ad.mul(vx, vy)))
    return ad.sub(1.0, corr)


def cross_entropy_loss(logits, gt_bin):
    """-log softmax(logits)[gt_bin], stabilized through log-sum-exp."""
    logits = ad.as_tensor(logits)
    k = logits.size
    if not isinstance(gt_bin, (int, np.integer)) or not (0 <= int(gt_bin) < k):
        raise ValueError(f"gt_bin must be an index in [0, {k}), got {gt_bin!r}")
    shift = float(logits.data.max())  # constant shift; exact for gradients
    z = ad.sub(logits, shift)
    lse = ad.log(ad.sum(ad.exp(z)))
    onehot = np.zeros(k)
    onehot[int(gt_bin)] = 1.0
    picked = ad.sum(ad.mul(z, onehot))
    return ad.sub(lse, picked)


@lru_cache(maxsize=16)
def _kernel_matrix_cached(grid, bandwidth):
    c = grid.centers_bpm
    d = c[:, None] - c[None, :]
    return np.exp(-(d * d) / (2.0 * bandwidth * bandwidth))


def rbf_kernel_matrix(grid, kernel=KernelConfig()):
    """Gram matrix of the RBF kernel over the grid's bin centers."""
    return _kernel_matrix_cached(grid, kernel.bandwidth_bpm)


def mmd2_pmf(p, q, grid=DEFAULT_GRID, kernel=KernelConfig()):
    """Squared MMD between two pmfs on one grid; differentiable through both.

    Computed as d^T K d with d = p - q, which equals the double-sum
    definition sum_ij p_i p_j k_ij + sum_ij q_i q_j k_ij - 2 sum_ij p_i q_j
    k_ij and is symmetric in (p, q) bit-for-bit.
    """
    p, q = ad.as_tensor(p), ad.as_tensor(q)
    kmat = rbf_kernel_matrix(grid, kernel)
    if p.shape != (grid.n_bins,) or q.shape != (grid.n_bins,):
        raise ValueError(
            f"pmfs must have shape ({grid.n_bins},), got {p.shape} and {q.shape}"
        )
    d = ad.sub(p, q)
    return ad.sum(ad.mul(ad.matmul(d, kmat), d))


def mmd2(p, q, kernel=KernelConfig()):
    """Squared MMD between two HrDistributions (clamped at 0 vs rounding)."""
    if p.grid != q.grid:
        raise ValueError(f"distributions live on different grids: {p.grid} vs {q.grid}")
    value = float(mmd2_pmf(Tensor(p.pmf), Tensor(q.pmf), p.grid, kernel).data)
    return max(0.0, value)


def kl_divergence(p, q):
    """KL(p || q) with 0 ln(0/.) = 0; +inf when some p_i > 0 has q_i = 0.

    The infinity is a legal, flagged result: it is exactly the
    absolute-continuity failure mode that motivates the MMD loss.
    """
    if p.grid != q.grid:
        raise ValueError(f"distributions live on different grids: {p.grid} vs {q.grid}")
    mask = p.pmf > 0
    if np.any(q.pmf[mask] == 0.0):
        return math.inf
    return float(np.sum(p.pmf[mask] * np.log(p.pmf[mask] / q.pmf[mask])))


def kl_divergence_smoothed(p, q, eps=1e-12):
    """KL variant with an eps floor on q: always finite, slightly biased."""
    if p.grid != q.grid:
        raise ValueError(f"distributions live on different grids: {p.grid} vs {q.grid}")
    mask = p.pmf > 0
    return float(np.sum(p.pmf[mask] * np.log(p.pmf[mask] / (q.pmf[mask] + eps))))


@lru_cache(maxsize=16)
def _psd_constants(n, fs, grid, sigma_bpm):
    """(window, cos matrix, sin matrix, smoothing matrix^T) for length n."""
    t = np.arange(n) / fs
    f = grid.centers_bpm / 60.0
    ang = 2.0 * np.pi * t[:, None] * f[None, :]
    w = np.hanning(n)
    c = grid.centers_bpm
    d = c[:, None] - c[None, :]
    g = np.exp(-(d * d) / (2.0 * sigma_bpm * sigma_bpm))
    g /= g.sum(axis=0, keepdims=True)  # columns sum to 1
    return w, np.cos(ang), np.sin(ang), g.T


def soft_hr_distribution(bvp, fs, grid=DEFAULT_GRID, sigma_bpm=2.0, tau_rel=0.1):
    """Differentiable distribution over HR bins from a BVP trace.

    The band-limited PSD is evaluated directly at the bin-center frequencies
    (Hann window, mean removed), passed through a softmax at temperature
    tau_rel x max power, and smeared with a width-sigma Gaussian over bins.
    As tau_rel -> 0 this converges to the hard Gaussian label centered at the
    PSD argmax; at finite temperature it keeps gradients flowing into `bvp`.
    """
    bvp = ad.as_tensor(bvp)
    n = bvp.size
    if n < 8:
        raise ValueError(f"need at least 8 samples, got {n}")
    if tau_rel <= 0:
        raise ValueError(f"tau_rel must be positive, got {tau_rel}")
    window, cos_m, sin_m, smear_t = _psd_constants(n, float(fs), grid, float(sigma_bpm))
    xw = ad.mul(ad.sub(bvp, ad.mean(bvp)), window)
    re = ad.matmul(xw, cos_m)
    im = ad.matmul(xw, sin_m)
    power = ad.add(ad.mul(re, re), ad.mul(im, im))
    # The 1e-30 floor only matters for an identically-zero signal (untrained
    # zero heads), where it turns 0/0 into a uniform band distribution; it
    # must stay large enough that its square does not underflow in the
    # division backward.
    tau = ad.add(ad.mul(ad.amax(power), tau_rel), 1e-30)
    sharp = ad.softmax(ad.div(power, tau), axis=0)
    smeared = ad.matmul(sharp, smear_t)
    return ad.div(smeared, ad.sum(smeared))


@lru_cache(maxsize=512)
def _soft_target_cached(gt_bytes, n, fs, grid, sigma_bpm, tau_rel):
    """Target-side soft distribution; the ground truth is constant per clip,
    so a training epoch reuses each clip's target."""
    gt = np.frombuffer(gt_bytes, dtype=np.float64, count=n)
    return soft_hr_distribution(Tensor(gt), fs, grid, sigma_bpm=sigma_bpm,
                                tau_rel=tau_rel).data


def video_mmd_loss(
    pred_bvp,
    gt_bvp,
    fs,
    grid=DEFAULT_GRID,
    sigma_bpm=2.0,
    kernel=KernelConfig(),
    tau_rel=0.1,
    hard_target=False,
    squared=True,
):
    """MMD^2 between HR distributions built from predicted and true BVP.

    Both sides use the soft PSD-anchored construction (the target side
    detached), so identical signals give exactly zero. `hard_target=True`
    instead compares against the hard Gaussian label at the target's PSD
    argmax. `squared=False` returns the root, shifted by 1e-24 under the
    sqrt so its gradient stays finite at zero.
    """
    pred_bvp, gt_bvp = ad.as_tensor(pred_bvp), ad.as_tensor(gt_bvp)
    if pred_bvp.size != gt_bvp.size:
        raise ValueError(f"length mismatch: pred {pred_bvp.size}, gt {gt_bvp.size}")
    if hard_target:
        hr = estimate_hr(periodogram(gt_bvp.data, fs), grid)
        target = Tensor(max_gaussian(hr, grid, sigma_bpm).pmf)
    else:
        target = Tensor(_soft_target_cached(
            gt_bvp.data.tobytes(), gt_bvp.size, float(fs), grid,
            float(sigma_bpm), float(tau_rel),
        ))
    pred_dist = soft_hr_distribution(pred_bvp, fs, grid, sigma_bpm=sigma_bpm, tau_rel=tau_rel)
    out = mmd2_pmf(pred_dist, target, grid, kernel)
    if not squared:
        out = ad.sqrt(ad.add(out, 1e-24))
    return out


def _accumulate(total, weight, term):
    weighted = ad.mul(term, float(weight))
    return weighted if total is None else ad.add(total, weighted)


def csl(
    pred_bvp,
    gt_bvp,
    logits,
    gt_bin,
    weights=LossWeights(),
    *,
    fs,
    grid=DEFAULT_GRID,
    sigma_bpm=2.0,
    kernel=KernelConfig(),
    tau_rel=0.1,
    hard_target=False,
):
    """alpha x cross-entropy + beta x Pearson + gamma x video-MMD.

    Zero-weight terms are skipped entirely (their inputs may be None), so
    csl with alpha=0 is bit-identical to wsl.
    """
    total = None
    if weights.alpha != 0.0:
        if logits is None or gt_bin is None:
            raise ValueError("the cross-entropy term needs logits and gt_bin")
        total = _accumulate(total, weights.alpha, cross_entropy_loss(logits, gt_bin))
    if weights.beta != 0.0:
        total = _accumulate(total, weights.beta, pearson_loss(pred_bvp, gt_bvp))
    if weights.gamma != 0.0:
        total = _accumulate(
            total,
            weights.gamma,
            video_mmd_loss(
                pred_bvp, gt_bvp, fs, grid,
                sigma_bpm=sigma_bpm, kernel=kernel, tau_rel=tau_rel,
                hard_target=hard_target,
            ),
        )
    return total if total is not None else Tensor(0.0)


def wsl(pred_bvp, gt_bvp, weights=LossWeights(), **kwargs):
    """The weak variant: csl without its cross-entropy term."""
    return csl(
        pred_bvp, gt_bvp, None, None,
        replace(weights, alpha=0.0), **kwargs,
    )
