"""Optimization loop, evaluation readout, and the loss-ablation runner.

Training is bit-deterministic for a fixed seed: parameter init, shuffling,
and augmentation all derive from one seed sequence, batch items are
processed in order, and gradients accumulate in a fixed order.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import NonFiniteError
from .losses import KernelConfig, LossWeights, csl
from .model import ModelConfig, count_parameters, forward, init_params
from .signal import DEFAULT_GRID, bandpass, estimate_hr, metrics, periodogram

__all__ = [
    "TrainConfig",
    "RunReport",
    "Adam",
    "LOSS_MODES",
    "mode_weights",
    "mode_label",
    "split_clips",
    "train",
    "evaluate",
    "ablation",
    "ablation_to_csv",
]

# Which of (cross-entropy, Pearson, video-MMD) each ablation mode keeps.
LOSS_MODES = {
    "csl": (True, True, True),
    "wsl": (False, True, True),
    "c": (True, False, False),
    "p": (False, True, False),
    "w": (False, False, True),
    "c+p": (True, True, False),
    "c+w": (True, False, True),
    "p+w": (False, True, True),
}


def mode_weights(mode, base):
    """Mask the base weights down to the terms a loss mode keeps."""
    try:
        keep_c, keep_p, keep_w = LOSS_MODES[mode]
    except KeyError:
        raise ValueError(f"unknown loss mode {mode!r}; choose from {sorted(LOSS_MODES)}")
    return LossWeights(
        alpha=base.alpha if keep_c else 0.0,
        beta=base.beta if keep_p else 0.0,
        gamma=base.gamma if keep_w else 0.0,
    )


def mode_label(mode):
    """Row label spelling out the term set explicitly."""
    keep = LOSS_MODES[mode]
    terms = "+".join(t for t, k in zip(("c", "p", "w"), keep) if k)
    return f"{terms} ({mode})" if mode in ("csl", "wsl") else terms


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-4
    batch_size: int = 4
    loss_mode: str = "csl"
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    sigma_bpm: float = 2.0
    kernel_bandwidth_bpm: float = 3.0
    tau_rel: float = 0.1
    augment: bool = False
    val_every: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"lr must be non-negative, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("need epochs >= 1 and batch_size >= 1")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"unknown loss mode {self.loss_mode!r}; choose from {sorted(LOSS_MODES)}")


@dataclass
class RunReport:
    """What one training run produced.

    `wall_time_s` is the only field that varies between reruns of an
    identical configuration; `to_json(include_timing=False)` drops it to get
    the canonical, byte-stable form.
    """

    epoch_losses: list
    val_mae: list            # [epoch, mae] pairs
    best_epoch: int
    final_metrics: dict
    wall_time_s: float
    config: dict

    def to_json(self, include_timing=True):
        d = asdict(self)
        if not include_timing:
            d.pop("wall_time_s")
        return json.dumps(d, sort_keys=True, indent=1) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())


class Adam:
    """Adam on the tape's leaf tensors; updates happen between tapes."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        ad.zero_grad(self.params)

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def split_clips(clips, train_frac=0.6):
    """Index split (no subject structure in synthetic data): first fraction
    trains, the rest evaluates."""
    n_train = int(round(len(clips) * train_frac))
    return clips[:n_train], clips[n_train:]


def _clip_loss(clip, params, model_cfg, weights, cfg, grid, rng):
    bvp, logits = forward(clip, params, model_cfg, rng=rng)
    gt = np.diff(clip.gt_bvp)  # match the prediction's difference domain
    return csl(
        bvp, gt, logits, grid.index_of(clip.gt_hr_bpm), weights,
        fs=clip.fs, grid=grid, sigma_bpm=cfg.sigma_bpm,
        kernel=KernelConfig(bandwidth_bpm=cfg.kernel_bandwidth_bpm),
        tau_rel=cfg.tau_rel,
    )


def evaluate(params, model_cfg, clips, grid=DEFAULT_GRID):
    """Readout metrics: band-passed predicted BVP -> PSD argmax -> HR."""
    if not clips:
        raise ValueError("evaluate needs at least one clip")
    preds, gts = [], []
    lo_hz, hi_hz = grid.band_hz
    for clip in clips:
        bvp, _ = forward(clip, params, model_cfg, rng=None)
        trace = bandpass(bvp.data, clip.fs, lo_hz, hi_hz)
        preds.append(estimate_hr(periodogram(trace, clip.fs), grid))
        gts.append(clip.gt_hr_bpm)
    return metrics(preds, gts)


def train(train_clips, model_cfg, cfg, val_clips=None, grid=DEFAULT_GRID):
    """Run the optimization; returns (best params, RunReport).

    Per-epoch mean loss is recorded; when a validation split is given, the
    checkpoint with the lowest validation MAE is retained (ties keep the
    earlier epoch). Aborts with NonFiniteError on a non-finite loss.
    """
    if not train_clips:
        raise ValueError("train needs a non-empty training split")
    t0 = time.perf_counter()
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    params = init_params(model_cfg, n_bins=grid.n_bins, seed=seeds[0])
    shuffle_rng = np.random.default_rng(seeds[1])
    augment_rng = np.random.default_rng(seeds[2]) if cfg.augment else None
    weights = mode_weights(cfg.loss_mode, cfg.weights)
    tensors = params.tensors()
    opt = Adam(tensors, lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2,
               eps=cfg.adam_eps)

    n = len(train_clips)
    epoch_losses = []
    val_curve = []
    best = None  # (mae, epoch, snapshot)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            opt.zero_grad()
            share = 1.0 / len(batch)
            for idx in batch:
                loss = _clip_loss(train_clips[int(idx)], params, model_cfg,
                                  weights, cfg, grid, augment_rng)
                value = loss.item()
                if not np.isfinite(value):
                    raise NonFiniteError(
                        f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}, "
                        f"clip {int(idx)}",
                        epoch=epoch, batch=start // cfg.batch_size, clip=int(idx),
                    )
                loss_sum += value
                ad.backward(ad.mul(loss, share))
            opt.step()
        epoch_losses.append(loss_sum / n)

        if val_clips and (epoch % cfg.val_every == 0 or epoch == cfg.epochs - 1):
            report = evaluate(params, model_cfg, val_clips, grid)
            val_curve.append([epoch, report.mae_bpm])
            if best is None or report.mae_bpm < best[0]:
                best = (report.mae_bpm, epoch, [t.data.copy() for t in tensors])

    if best is not None:
        for t, snap in zip(tensors, best[2]):
            t.data = snap
        best_epoch = best[1]
        final = evaluate(params, model_cfg, val_clips, grid)
    else:
        best_epoch = cfg.epochs - 1
        final = None

    report = RunReport(
        epoch_losses=epoch_losses,
        val_mae=val_curve,
        best_epoch=best_epoch,
        final_metrics=None if final is None else asdict(final),
        wall_time_s=time.perf_counter() - t0,
        config={
            "train": _jsonable(asdict(cfg)),
            "model": _jsonable(asdict(model_cfg)),
            "grid": _jsonable(asdict(grid)),
            "n_train": n,
            "n_val": len(val_clips) if val_clips else 0,
            "n_parameters": count_parameters(params),
        },
    )
    return params, report


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    return obj


def ablation(clips, model_cfg, base_cfg, modes, seeds=(0,), grid=DEFAULT_GRID,
             train_frac=0.6):
    """Train one model per (mode, seed) on a shared split; rows keep the
    requested mode order."""
    if not modes:
        raise ValueError("ablation needs at least one loss mode")
    train_split, val_split = split_clips(clips, train_frac)
    rows = []
    for mode in modes:
        for seed in seeds:
            cfg = replace(base_cfg, loss_mode=mode, seed=seed)
            _, report = train(train_split, model_cfg, cfg, val_clips=val_split, grid=grid)
            rows.append({"mode": mode, "seed": seed, "report": report})
    return rows


def ablation_to_csv(rows, path, runs_path=None):
    """Summary CSV (median over seeds per mode, in first-seen mode order),
    optionally plus a per-run detail CSV."""
    order = []
    by_mode = {}
    for row in rows:
        if row["mode"] not in by_mode:
            order.append(row["mode"])
            by_mode[row["mode"]] = []
        by_mode[row["mode"]].append(row)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["loss_terms", "mae", "rmse", "rho"])
        for mode in order:
            group = by_mode[mode]
            med = lambda key: float(np.median([r["report"].final_metrics[key] for r in group]))
            writer.writerow([
                mode_label(mode),
                f"{med('mae_bpm'):.4f}", f"{med('rmse_bpm'):.4f}", f"{med('pearson_rho'):.4f}",
            ])
    if runs_path:
        with open(runs_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["loss_terms", "seed", "mae", "rmse", "rho", "best_epoch"])
            for row in rows:
                fm = row["report"].final_metrics
                writer.writerow([
                    mode_label(row["mode"]), row["seed"],
                    f"{fm['mae_bpm']:.4f}", f"{fm['rmse_bpm']:.4f}",
                    f"{fm['pearson_rho']:.4f}", row["report"].best_epoch,
                ])
