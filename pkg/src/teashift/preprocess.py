"""Frequency-domain filtering, statistical epoch rejection, resampling, and
DTW-based channel averaging.

Filtering multiplies the one-sided spectrum by a passband window (flat inside
the band, raised-cosine edges) and inverts the transform, which keeps the
output real by construction. Rejection z-scores three per-epoch statistics
within a subject. Channel averaging uses DTW Barycenter Averaging so that a
multi-channel epoch collapses to one series without arithmetic-mean smearing.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.signal

from teashift._kernels import dtw_cost, dtw_path
from teashift.data import Epoch, SubjectRecord
from teashift.errors import ValidationError


@dataclass(frozen=True)
class Band:
    """Frequency band in Hz; validity against fs is checked at point of use."""

    low_hz: float
    high_hz: float

    def __post_init__(self):
        if not 0 <= self.low_hz < self.high_hz:
            raise ValidationError(f"invalid band [{self.low_hz}, {self.high_hz}]")


@dataclass
class RejectionReport:
    """Per-epoch z-scores of the three rejection metrics plus kept/dropped flags."""

    z_amplitude_range: np.ndarray
    z_variance: np.ndarray
    z_channel_deviation: np.ndarray
    kept: list[int]
    dropped: list[int]

    def to_json(self) -> dict:
        return {
            "z_amplitude_range": self.z_amplitude_range.tolist(),
            "z_variance": self.z_variance.tolist(),
            "z_channel_deviation": self.z_channel_deviation.tolist(),
            "kept": list(self.kept),
            "dropped": list(self.dropped),
        }


def _passband_window(freqs: np.ndarray, band: Band, taper_hz: float) -> np.ndarray:
    """1 inside [low, high], 0 outside, raised-cosine ramps of width taper_hz."""
    w = np.zeros_like(freqs)
    lo, hi = band.low_hz, band.high_hz
    w[(freqs >= lo) & (freqs <= hi)] = 1.0
    if taper_hz > 0:
        rising = (freqs > lo - taper_hz) & (freqs < lo)
        w[rising] = 0.5 * (1 + np.cos(np.pi * (lo - freqs[rising]) / taper_hz))
        falling = (freqs > hi) & (freqs < hi + taper_hz)
        w[falling] = 0.5 * (1 + np.cos(np.pi * (freqs[falling] - hi) / taper_hz))
    return w


def bandpass_series(x: np.ndarray, fs: float, band: Band, taper_hz: float = 0.5) -> np.ndarray:
    """Frequency-domain bandpass of a 1-D series; returns a real series of equal length."""
    if band.high_hz > fs / 2:
        raise ValidationError(
            f"band [{band.low_hz}, {band.high_hz}] exceeds Nyquist {fs / 2}"
        )
    x = np.asarray(x, dtype=np.float64)
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.shape[0], 1.0 / fs)
    return np.fft.irfft(spec * _passband_window(freqs, band, taper_hz), n=x.shape[0])


def fft_bandpass(epoch: Epoch, band: Band, taper_hz: float = 0.5) -> Epoch:
    """Bandpass every channel of an epoch in the frequency domain."""
    filtered = np.vstack(
        [bandpass_series(epoch.samples[c], epoch.fs, band, taper_hz) for c in range(epoch.n_channels)]
    )
    return Epoch(filtered, epoch.fs, epoch.stage)


def _zscores(values: np.ndarray) -> np.ndarray:
    std = values.std()
    if std == 0:
        return np.zeros_like(values)
    return (values - values.mean()) / std


def reject_epochs(
    subject: SubjectRecord, z_thresh: float = 3.0
) -> tuple[SubjectRecord, RejectionReport]:
    """Drop epochs whose amplitude range, variance, or channel deviation is an
    outlier (|z| > z_thresh) among the subject's own epochs.

    Channel deviation is the max over channels of |channel mean - grand mean|,
    identically 0 for single-channel data. Needs at least 3 epochs.
    """
    epochs = subject.epochs
    if len(epochs) < 3:
        raise ValidationError(f"need >= 3 epochs to z-score, got {len(epochs)}")

    amp_range = np.array([e.samples.max() - e.samples.min() for e in epochs])
    variance = np.array([e.samples.var() for e in epochs])
    chan_dev = np.array(
        [np.abs(e.samples.mean(axis=1) - e.samples.mean()).max() for e in epochs]
    )

    z_amp = _zscores(amp_range)
    z_var = _zscores(variance)
    z_dev = _zscores(chan_dev)

    bad = (np.abs(z_amp) > z_thresh) | (np.abs(z_var) > z_thresh) | (np.abs(z_dev) > z_thresh)
    kept = [i for i in range(len(epochs)) if not bad[i]]
    dropped = [i for i in range(len(epochs)) if bad[i]]
    report = RejectionReport(z_amp, z_var, z_dev, kept, dropped)
    return replace(subject, epochs=[epochs[i] for i in kept]), report


def resample(epoch: Epoch, target_hz: float) -> Epoch:
    """Fourier-domain resampling of every channel to target_hz."""
    if not target_hz > 0:
        raise ValidationError(f"target_hz must be positive, got {target_hz}")
    num = int(round(epoch.n_samples * target_hz / epoch.fs))
    resampled = scipy.signal.resample(epoch.samples, num, axis=1)
    return Epoch(resampled, target_hz, epoch.stage)


def dtw_distance(a, b, window: int | None = None) -> float:
    """Accumulated squared-difference DTW cost (symmetric in its arguments)."""
    return dtw_cost(a, b, window)


def _dba_iterate(series: np.ndarray, barycenter: np.ndarray, window):
    """One DBA update: warp every series onto the barycenter, average per index."""
    n = barycenter.shape[0]
    sums = np.zeros(n)
    counts = np.zeros(n)
    total = 0.0
    for row in series:
        cost, idx_bary, idx_row = dtw_path(barycenter, row, window)
        np.add.at(sums, idx_bary, row[idx_row])
        np.add.at(counts, idx_bary, 1.0)
        total += cost
    return sums / counts, total


def dba_average_channels(
    epoch: Epoch, max_iters: int = 10, tol: float = 1e-6, window: int | None = None
) -> Epoch:
    """Collapse an epoch's channels to one series via DTW Barycenter Averaging.

    Starts from the medoid channel (minimum total DTW cost to the others) and
    iterates warp-and-average until the total cost improves by less than tol
    (relative) or max_iters is reached. The cost sequence is non-increasing.
    """
    series = epoch.samples
    if epoch.n_channels == 1:
        return Epoch(series.copy(), epoch.fs, epoch.stage)

    k = epoch.n_channels
    cross = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            cross[i, j] = cross[j, i] = dtw_cost(series[i], series[j], window)
    barycenter = series[int(np.argmin(cross.sum(axis=1)))].copy()

    prev_total = np.inf
    for _ in range(max_iters):
        updated, total = _dba_iterate(series, barycenter, window)
        if total == 0.0:
            barycenter = updated
            break
        if prev_total - total < tol * prev_total:
            break
        barycenter = updated
        prev_total = total
    return Epoch(barycenter[np.newaxis, :], epoch.fs, epoch.stage)
