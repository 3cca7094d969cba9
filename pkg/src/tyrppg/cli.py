"""Command-line surface: synth, train, eval, ablate, plot, grad-check.

Exit codes: 0 success, 2 configuration/validation error, 3 runtime
numerical failure. Configuration flows defaults -> JSON config file ->
repeated --set dotted-key overrides -> explicit flags; unknown keys are
rejected, and every report echoes the effective configuration.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import fields, replace

import numpy as np

from .errors import NonFiniteError
from .model import ModelConfig, forward, load_model, save_model
from .signal import (
    DEFAULT_GRID,
    bandpass,
    estimate_hr,
    metrics_to_csv,
    periodogram,
    spectrum_to_csv,
)
from .synth import SynthConfig, load_dataset, save_dataset, synth_dataset
from .train import (
    TrainConfig,
    ablation,
    ablation_to_csv,
    evaluate,
    split_clips,
    train,
)
from .verification import format_table, run_gradient_suite

__all__ = ["main", "script_entry"]

_SECTIONS = {"synth": SynthConfig, "train": TrainConfig, "model": ModelConfig}


# ---------------------------------------------------------------------------
# configuration plumbing
# ---------------------------------------------------------------------------


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _load_config_file(path):
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    for section in data:
        if section not in _SECTIONS:
            raise ValueError(
                f"unknown config section {section!r}; known: {sorted(_SECTIONS)}"
            )
    return data


def _apply_sets(data, sets):
    for item in sets or []:
        if "=" not in item:
            raise ValueError(f"--set expects dotted.key=value, got {item!r}")
        key, value = item.split("=", 1)
        parts = key.split(".")
        if len(parts) != 2 or parts[0] not in _SECTIONS:
            raise ValueError(
                f"--set key must look like section.field with section in "
                f"{sorted(_SECTIONS)}, got {key!r}"
            )
        data.setdefault(parts[0], {})[parts[1]] = _parse_value(value)
    return data


def _build_section(cls, data):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(
            f"unknown {cls.__name__} key(s) {sorted(unknown)}; known: {sorted(known)}"
        )
    return cls(**data)


def _effective(args, section):
    """Merge file config and --set overrides for one section."""
    data = {}
    if getattr(args, "config", None):
        data = _load_config_file(args.config)
    data = _apply_sets(data, getattr(args, "set", None))
    return dict(data.get(section, {}))


def _echo(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1, default=str)
        fh.write("\n")


# ---------------------------------------------------------------------------
# SVG plotting (dependency-free, byte-deterministic)
# ---------------------------------------------------------------------------


def _svg_plot(path, series, title, width=720, height=300):
    """series: list of (label, ys, dashed). Ground truth solid, estimates
    dotted, per the figure convention."""
    margin = 40
    all_y = np.concatenate([np.asarray(ys, dtype=float) for _, ys, _ in series])
    ylo, yhi = float(all_y.min()), float(all_y.max())
    if yhi - ylo < 1e-12:
        yhi = ylo + 1.0
    n = max(len(ys) for _, ys, _ in series)
    colors = ["#000000", "#c02020", "#2040c0", "#208040"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white" stroke="none"/>',
        f'<text x="{margin}" y="20" font-family="monospace" font-size="13">{title}</text>',
        f'<rect x="{margin}" y="{margin - 10}" width="{width - 2 * margin}" '
        f'height="{height - 2 * margin}" fill="none" stroke="#888888"/>',
    ]
    for i, (label, ys, dashed) in enumerate(series):
        ys = np.asarray(ys, dtype=float)
        xs = np.arange(len(ys))
        px = margin + (width - 2 * margin) * xs / max(n - 1, 1)
        py = (height - margin) - (height - 2 * margin - 10) * (ys - ylo) / (yhi - ylo)
        points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(px, py))
        dash = ' stroke-dasharray="5,4"' if dashed else ""
        color = colors[i % len(colors)]
        parts.append(
            f'<polyline fill="none" stroke="{color}" stroke-width="1.2"{dash} '
            f'points="{points}"/>'
        )
        parts.append(
            f'<text x="{margin + 5}" y="{margin + 6 + 14 * i}" font-family="monospace" '
            f'font-size="11" fill="{color}">{label}{" (dotted)" if dashed else ""}</text>'
        )
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
        fh.write("\n")


def _read_trace(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"gt", "pred"} <= set(reader.fieldnames):
            raise ValueError(f"trace file {path} needs columns gt,pred")
        gt, pred = [], []
        for row in reader:
            gt.append(float(row["gt"]))
            pred.append(float(row["pred"]))
    if not gt:
        raise ValueError(f"trace file {path} is empty")
    return np.asarray(gt), np.asarray(pred)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_synth(args):
    data = _effective(args, "synth")
    for flag in ("n_clips", "n_frames", "seed"):
        v = getattr(args, flag)
        if v is not None:
            data[flag] = v
    if args.hr_range is not None:
        lo, hi = (float(v) for v in args.hr_range.split(","))
        data["hr_range_bpm"] = (lo, hi)
    cfg = _build_section(SynthConfig, data)
    clips = synth_dataset(cfg)  # validates the HR band
    save_dataset(clips, args.out, cfg)
    print(f"wrote {len(clips)} clips to {args.out}")
    return 0


def _cmd_train(args):
    tdata = _effective(args, "train")
    for flag in ("epochs", "seed", "batch_size"):
        v = getattr(args, flag)
        if v is not None:
            tdata[flag] = v
    if args.lr is not None:
        tdata["lr"] = args.lr
    if args.loss is not None:
        tdata["loss_mode"] = args.loss
    if args.augment:
        tdata["augment"] = True
    tcfg = _build_section(TrainConfig, tdata)
    mcfg = _build_section(ModelConfig, _effective(args, "model"))

    clips = load_dataset(args.data)
    train_split, val_split = split_clips(clips, args.train_frac)
    params, report = train(train_split, mcfg, tcfg, val_clips=val_split)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "checkpoint.tyk")
    save_model(ckpt, params, mcfg, seed=tcfg.seed, epoch=report.best_epoch)
    report.save(os.path.join(args.out, "report.json"))
    print(f"trained {tcfg.epochs} epochs (loss mode {tcfg.loss_mode}, lr {tcfg.lr})")
    if report.final_metrics:
        fm = report.final_metrics
        print(f"held-out: mae={fm['mae_bpm']:.2f} rmse={fm['rmse_bpm']:.2f} "
              f"rho={fm['pearson_rho']:.3f}")
    print(f"wrote {ckpt}")
    return 0


def _cmd_eval(args):
    if not os.path.exists(args.checkpoint):
        raise FileNotFoundError(f"checkpoint {args.checkpoint} does not exist")
    params, mcfg, manifest = load_model(args.checkpoint)
    clips = load_dataset(args.data)
    report = evaluate(params, mcfg, clips)
    print(f"mae={report.mae_bpm:.3f} rmse={report.rmse_bpm:.3f} "
          f"rho={report.pearson_rho:.3f}"
          + (" (degenerate variance)" if report.degenerate else ""))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        metrics_to_csv(report, os.path.join(args.out, "metrics.csv"))
        _echo(os.path.join(args.out, "eval_config.json"),
              {"checkpoint": args.checkpoint, "data": args.data, "manifest": manifest})
    return 0


def _cmd_ablate(args):
    tcfg = _build_section(TrainConfig, _effective(args, "train"))
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
    mcfg = _build_section(ModelConfig, _effective(args, "model"))
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    seeds = [int(s) for s in args.seeds.split(",")]
    clips = load_dataset(args.data)
    rows = ablation(clips, mcfg, tcfg, modes, seeds=seeds, train_frac=args.train_frac)
    os.makedirs(args.out, exist_ok=True)
    table = os.path.join(args.out, "ablation.csv")
    ablation_to_csv(rows, table, runs_path=os.path.join(args.out, "ablation_runs.csv"))
    for row in rows:
        fm = row["report"].final_metrics
        print(f"{row['mode']:>4} seed {row['seed']}: mae={fm['mae_bpm']:.2f} "
              f"rmse={fm['rmse_bpm']:.2f} rho={fm['pearson_rho']:.3f}")
    print(f"wrote {table}")
    return 0


def _cmd_plot(args):
    os.makedirs(args.out, exist_ok=True)
    wrote = []
    if args.trace:
        gt, pred = _read_trace(args.trace)
        svg = os.path.join(args.out, "bvp_overlay.svg")
        _svg_plot(svg, [("ground truth", gt, False), ("estimate", pred, True)],
                  "BVP: ground truth vs estimate")
        spectrum_to_csv(periodogram(gt, args.fs), os.path.join(args.out, "psd_gt.csv"))
        spectrum_to_csv(periodogram(pred, args.fs), os.path.join(args.out, "psd_pred.csv"))
        wrote += [svg, os.path.join(args.out, "psd_gt.csv"),
                  os.path.join(args.out, "psd_pred.csv")]
    if args.clip:
        from .containers import load_clip

        clip = load_clip(args.clip)
        series = [("ground truth", clip.gt_bvp, False)]
        psd = periodogram(clip.gt_bvp, clip.fs)
        spectrum_to_csv(psd, os.path.join(args.out, "psd.csv"))
        wrote.append(os.path.join(args.out, "psd.csv"))
        if args.checkpoint:
            params, mcfg, _ = load_model(args.checkpoint)
            bvp, _ = forward(clip, params, mcfg)
            trace = bandpass(bvp.data, clip.fs, *DEFAULT_GRID.band_hz)
            series.append(("estimate", trace, True))
            hr = estimate_hr(periodogram(trace, clip.fs))
            print(f"estimated {hr:.1f} bpm (truth {clip.gt_hr_bpm:.1f})")
        svg = os.path.join(args.out, "bvp_overlay.svg")
        _svg_plot(svg, series, "BVP: ground truth vs estimate")
        wrote.append(svg)
    if args.compare_kl and args.compare_mmd:
        gk, pk = _read_trace(args.compare_kl)
        gm, pm = _read_trace(args.compare_mmd)
        svg = os.path.join(args.out, "kl_vs_mmd.svg")
        _svg_plot(
            svg,
            [("KL truth", gk, False), ("KL estimate", pk, True),
             ("MMD truth", gm, False), ("MMD estimate", pm, True)],
            "KL-trained vs MMD-trained estimates",
        )
        wrote.append(svg)
    if not wrote:
        raise ValueError("plot needs --trace, --clip, or --compare-kl with --compare-mmd")
    for w in wrote:
        print(f"wrote {w}")
    return 0


def _cmd_grad_check(args):
    results = run_gradient_suite(n_seeds=args.seeds, include_network=not args.skip_network)
    print(format_table(results))
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} case(s) FAILED")
        return 3
    print(f"all {len(results)} cases passed ({args.seeds} seeds)")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_common(sp):
    sp.add_argument("--config", help="JSON config file (sections: synth/train/model)")
    sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="dotted-key override, e.g. train.lr=3e-4 (repeatable)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tyrppg",
        description="Remote heart-rate pipeline: synthesize data, train, evaluate, plot.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic clip dataset")
    _add_common(p)
    p.add_argument("--clips", dest="n_clips", type=int, default=None,
                   help="number of clips (default 80)")
    p.add_argument("--frames", dest="n_frames", type=int, default=None,
                   help="frames per clip (default 120)")
    p.add_argument("--seed", type=int, default=None, help="dataset seed (default 0)")
    p.add_argument("--hr-range", dest="hr_range", default=None,
                   help="lo,hi heart-rate range in bpm (default 50,150)")
    p.add_argument("-o", "--out", required=True, help="output dataset directory")
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset directory")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--loss", default=None, help="loss mode (default csl)")
    p.add_argument("--epochs", type=int, default=None, help="epochs (default 30)")
    p.add_argument("--lr", type=float, default=None, help="learning rate (default 1e-4)")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None,
                   help="mini-batch size (default 4)")
    p.add_argument("--seed", type=int, default=None, help="training seed (default 0)")
    p.add_argument("--augment", action="store_true",
                   help="enable seeded crop/flip augmentation (default off)")
    p.add_argument("--train-frac", dest="train_frac", type=float, default=0.6,
                   help="training fraction of the split (default 0.6)")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.set_defaults(handler=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("-o", "--out", default=None, help="optional output directory")
    p.set_defaults(handler=_cmd_eval)

    p = sub.add_parser("ablate", help="train one model per loss mode")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--modes", default="csl,wsl,c,p,w",
                   help="comma list of loss modes (default csl,wsl,c,p,w)")
    p.add_argument("--seeds", default="0", help="comma list of seeds (default 0)")
    p.add_argument("--epochs", type=int, default=None, help="override epochs")
    p.add_argument("--train-frac", dest="train_frac", type=float, default=0.6,
                   help="training fraction (default 0.6)")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.set_defaults(handler=_cmd_ablate)

    p = sub.add_parser("plot", help="emit SVG/CSV figures from traces or clips")
    _add_common(p)
    p.add_argument("--trace", default=None, help="CSV with columns t,gt,pred")
    p.add_argument("--clip", default=None, help="a .tyc clip file")
    p.add_argument("--checkpoint", default=None,
                   help="with --clip: overlay the model estimate")
    p.add_argument("--compare-kl", dest="compare_kl", default=None,
                   help="trace CSV from a KL-trained model")
    p.add_argument("--compare-mmd", dest="compare_mmd", default=None,
                   help="trace CSV from an MMD-trained model")
    p.add_argument("--fs", type=float, default=30.0, help="trace sampling rate (Hz)")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.set_defaults(handler=_cmd_plot)

    p = sub.add_parser("grad-check", help="run the full gradient verification suite")
    p.add_argument("--seeds", type=int, default=100, help="random seeds per case (default 100)")
    p.add_argument("--skip-network", action="store_true",
                   help="skip the full-network finite-difference case")
    p.set_defaults(handler=_cmd_grad_check)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def script_entry():
    sys.exit(main())
