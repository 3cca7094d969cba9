"""BVP-to-heart-rate analysis: periodogram, band-limited peak readout,
discrete Gaussian label distributions over an HR bin grid, and metrics."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.signal

__all__ = [
    "HrBinGrid",
    "DEFAULT_GRID",
    "PsdSpectrum",
    "HrDistribution",
    "MetricsReport",
    "periodogram",
    "estimate_hr",
    "max_gaussian",
    "metrics",
    "bandpass",
    "hr_from_logits",
    "spectrum_to_csv",
    "metrics_to_csv",
]


@dataclass(frozen=True)
class HrBinGrid:
    """Uniform heart-rate bins over [lo_bpm, hi_bpm) with the given width.

    Bin i covers [lo + i*step, lo + (i+1)*step); centers sit at midpoints.
    The default 40-180 bpm at 1 bpm gives 140 bins.
    """

    lo_bpm: float = 40.0
    hi_bpm: float = 180.0
    step_bpm: float = 1.0

    def __post_init__(self):
        if not (self.lo_bpm < self.hi_bpm):
            raise ValueError(f"need lo < hi, got [{self.lo_bpm}, {self.hi_bpm}]")
        if self.step_bpm <= 0:
            raise ValueError(f"step must be positive, got {self.step_bpm}")

    @property
    def n_bins(self):
        return int(math.floor((self.hi_bpm - self.lo_bpm) / self.step_bpm))

    @property
    def centers_bpm(self):
        return self.lo_bpm + (np.arange(self.n_bins) + 0.5) * self.step_bpm

    @property
    def band_hz(self):
        return self.lo_bpm / 60.0, self.hi_bpm / 60.0

    def index_of(self, hr_bpm):
        """Bin index containing hr_bpm, clamped to the grid."""
        i = int(math.floor((hr_bpm - self.lo_bpm) / self.step_bpm))
        return min(max(i, 0), self.n_bins - 1)


DEFAULT_GRID = HrBinGrid()


@dataclass
class PsdSpectrum:
    """One-sided power spectral density on an ascending frequency grid."""

    freqs_hz: np.ndarray
    power: np.ndarray

    def __post_init__(self):
        self.freqs_hz = np.asarray(self.freqs_hz, dtype=np.float64)
        self.power = np.asarray(self.power, dtype=np.float64)
        if self.freqs_hz.shape != self.power.shape:
            raise ValueError("freqs and power must have the same length")
        if np.any(np.diff(self.freqs_hz) <= 0):
            raise ValueError("frequency grid must be strictly ascending")
        if np.any(self.power < 0):
            raise ValueError("power must be non-negative")


@dataclass
class HrDistribution:
    """Probability mass over the bins of an HrBinGrid."""

    grid: HrBinGrid
    pmf: np.ndarray

    def __post_init__(self):
        self.pmf = np.asarray(self.pmf, dtype=np.float64)
        if self.pmf.shape != (self.grid.n_bins,):
            raise ValueError(f"pmf length {self.pmf.shape} != {self.grid.n_bins} bins")
        if np.any(self.pmf < 0):
            raise ValueError("pmf must be non-negative")
        if abs(self.pmf.sum() - 1.0) > 1e-9:
            raise ValueError(f"pmf must sum to 1 (got {self.pmf.sum()!r})")


@dataclass
class MetricsReport:
    mae_bpm: float
    rmse_bpm: float
    pearson_rho: float
    degenerate: bool = False  # a zero-variance side forced rho to 0


def periodogram(x, fs, nfft=2048):
    """Mean-removed, Hann-windowed one-sided periodogram.

    Power is |DFT|^2 / (fs * sum(w^2)), doubled on bins with a mirrored
    counterpart. The DFT is zero-padded to nfft (or the next power of two
    above the signal length) for readout resolution.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    t = x.size
    if t < 8:
        raise ValueError(f"periodogram needs at least 8 samples, got {t}")
    if fs <= 0:
        raise ValueError(f"sampling rate must be positive, got {fs}")
    while nfft < t:
        nfft *= 2
    w = np.hanning(t)
    xw = (x - x.mean()) * w
    spec = np.fft.rfft(xw, n=nfft)
    power = (spec.real**2 + spec.imag**2) / (fs * np.sum(w * w))
    power[1:] *= 2.0
    if nfft % 2 == 0:
        power[-1] /= 2.0  # Nyquist bin has no mirror
    freqs = np.fft.rfftfreq(nfft, d=1.0 / fs)
    return PsdSpectrum(freqs_hz=freqs, power=power)


def estimate_hr(psd, grid=DEFAULT_GRID):
    """60 x argmax frequency of the PSD restricted to the grid's band.

    Ties break toward the lower frequency.
    """
    lo_hz, hi_hz = grid.band_hz
    mask = (psd.freqs_hz >= lo_hz) & (psd.freqs_hz <= hi_hz)
    if not mask.any():
        raise ValueError(
            f"band [{lo_hz:.3f}, {hi_hz:.3f}] Hz does not intersect the spectrum grid"
        )
    freqs = psd.freqs_hz[mask]
    power = psd.power[mask]
    return 60.0 * float(freqs[int(np.argmax(power))])


def max_gaussian(hr_bpm, grid=DEFAULT_GRID, sigma_bpm=2.0):
    """Discrete Gaussian label distribution centered at hr_bpm.

    pmf_i is proportional to exp(-(center_i - hr)^2 / (2 sigma^2)),
    renormalized to sum to 1. A center far outside the band still returns a
    (boundary-concentrated) distribution, with a warning.
    """
    if sigma_bpm <= 0:
        raise ValueError(f"sigma must be positive, got {sigma_bpm}")
    if not (grid.lo_bpm - 3 * sigma_bpm <= hr_bpm <= grid.hi_bpm + 3 * sigma_bpm):
        warnings.warn(
            f"heart rate {hr_bpm:.1f} bpm lies outside the grid band "
            f"[{grid.lo_bpm}, {grid.hi_bpm}] by more than 3 sigma; "
            "mass will concentrate at the boundary",
            stacklevel=2,
        )
    z = (grid.centers_bpm - hr_bpm) / sigma_bpm
    raw = np.exp(-0.5 * z * z)
    total = raw.sum()
    if total == 0.0:  # everything underflowed; fall back to the nearest bin
        raw = np.zeros(grid.n_bins)
        raw[grid.index_of(hr_bpm)] = 1.0
        total = 1.0
    return HrDistribution(grid=grid, pmf=raw / total)


def metrics(pred_bpm, gt_bpm):
    """MAE / RMSE / sample Pearson correlation between two HR lists.

    A zero-variance side makes the correlation undefined; it is reported as
    0 with the `degenerate` flag set.
    """
    pred = np.asarray(pred_bpm, dtype=np.float64).reshape(-1)
    gt = np.asarray(gt_bpm, dtype=np.float64).reshape(-1)
    if pred.size != gt.size or pred.size == 0:
        raise ValueError(f"need equal non-zero lengths, got {pred.size} and {gt.size}")
    d = pred - gt
    mae = float(np.abs(d).mean())
    rmse = float(np.sqrt((d * d).mean()))
    pc = pred - pred.mean()
    gc = gt - gt.mean()
    vp = float((pc * pc).sum())
    vg = float((gc * gc).sum())
    if vp == 0.0 or vg == 0.0:
        return MetricsReport(mae_bpm=mae, rmse_bpm=rmse, pearson_rho=0.0, degenerate=True)
    rho = float((pc * gc).sum() / math.sqrt(vp * vg))
    return MetricsReport(mae_bpm=mae, rmse_bpm=rmse, pearson_rho=rho)


def bandpass(x, fs, lo_hz, hi_hz):
    """Zero-phase FIR band-pass (forward-backward), DC removed exactly.

    The tap count adapts to the signal length so filtfilt's padding fits.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if not (0 < lo_hz < hi_hz < fs / 2):
        raise ValueError(f"need 0 < lo < hi < fs/2, got lo={lo_hz}, hi={hi_hz}, fs={fs}")
    t = x.size
    numtaps = min(101, t - 3)
    if numtaps % 2 == 0:
        numtaps -= 1
    if numtaps < 5:
        raise ValueError(f"signal too short to filter ({t} samples)")
    taps = scipy.signal.firwin(numtaps, [lo_hz, hi_hz], pass_zero=False, fs=fs)
    padlen = min(3 * numtaps, t - 2)
    return scipy.signal.filtfilt(taps, [1.0], x - x.mean(), padlen=padlen)


def hr_from_logits(logits, grid=DEFAULT_GRID):
    """Readout of the classification head: center of the argmax bin."""
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if logits.size != grid.n_bins:
        raise ValueError(f"got {logits.size} logits for {grid.n_bins} bins")
    return float(grid.centers_bpm[int(np.argmax(logits))])


def spectrum_to_csv(psd, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["freq_hz", "power"])
        for f, p in zip(psd.freqs_hz, psd.power):
            writer.writerow([repr(float(f)), repr(float(p))])


def metrics_to_csv(report, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mae", "rmse", "rho"])
        writer.writerow([
            repr(report.mae_bpm),
            repr(report.rmse_bpm),
            repr(report.pearson_rho),
        ])
