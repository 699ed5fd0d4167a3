"""Per-epoch QEEG feature bank.

Spectral measures come from a Welch periodogram (band power, relative power,
slow:fast ratios, spectral entropy), phase measures from the FFT analytic
signal (phase-amplitude coupling, phase locking), plus Welch cross-spectral
coherence, pairwise amplitude asymmetry, and the Hjorth time-domain triple.
extract_features assembles them into a vector with a deterministic name order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from teashift.data import Epoch
from teashift.errors import TeaShiftError, ValidationError
from teashift.preprocess import Band, bandpass_series

BAND_TABLE: dict[str, Band] = {
    "delta": Band(0.5, 4.0),
    "theta": Band(4.0, 8.0),
    "alpha": Band(8.0, 12.0),
    "sigma": Band(12.0, 16.0),
    "beta": Band(12.0, 35.0),
}


@dataclass(frozen=True)
class FeatureConfig:
    """Band table and estimator settings; the feature-name order is a pure
    function of (n_channels, config)."""

    bands: tuple[tuple[str, Band], ...] = tuple(BAND_TABLE.items())
    ratios: tuple[tuple[str, Band, Band], ...] = (
        ("theta_alpha", Band(4.0, 8.0), Band(8.0, 12.0)),
        ("alpha1_alpha2", Band(8.0, 10.0), Band(10.0, 12.0)),
    )
    welch_seg_seconds: float = 2.0
    welch_overlap: float = 0.5
    pac_low: Band = Band(0.5, 4.0)
    pac_high: Band = Band(12.0, 35.0)
    pac_bins: int = 18
    taper_hz: float = 0.5


@dataclass
class Psd:
    """One-sided power spectral density on a 0..fs/2 grid."""

    freqs: np.ndarray
    power: np.ndarray


@dataclass
class AnalyticSignal:
    phase: np.ndarray  # radians in (-pi, pi]
    envelope: np.ndarray  # nonnegative


@dataclass
class PacProfile:
    """Phase-binned normalized envelope distribution and its modulation index."""

    p: np.ndarray
    mi: float
    empty_bins: list[int] = field(default_factory=list)


@dataclass
class FeatureVector:
    values: np.ndarray
    names: list[str]


@dataclass
class FeatureMatrix:
    """Rows of feature vectors sharing one name order."""

    values: np.ndarray
    names: list[str]

    @classmethod
    def from_vectors(cls, vectors: list[FeatureVector]) -> "FeatureMatrix":
        if not vectors:
            raise ValidationError("no feature vectors to stack")
        names = vectors[0].names
        for v in vectors[1:]:
            if v.names != names:
                raise ValidationError("feature vectors disagree on name order")
        return cls(np.vstack([v.values for v in vectors]), list(names))

    def to_csv(self, path) -> None:
        header = ",".join(self.names)
        np.savetxt(path, self.values, delimiter=",", header=header, comments="")


def _welch_params(fs: float, seg_seconds: float, overlap: float) -> tuple[int, int]:
    nperseg = int(round(seg_seconds * fs))
    return nperseg, int(nperseg * overlap)


def welch_psd(
    x, fs: float, seg_seconds: float = 2.0, overlap: float = 0.5
) -> Psd:
    """Hann-windowed averaged periodogram with density scaling."""
    x = np.asarray(x, dtype=np.float64)
    nperseg, noverlap = _welch_params(fs, seg_seconds, overlap)
    if x.shape[-1] < nperseg:
        raise ValidationError(
            f"signal of {x.shape[-1]} samples is shorter than one {seg_seconds}s segment"
        )
    freqs, power = scipy.signal.welch(
        x, fs=fs, window="hann", nperseg=nperseg, noverlap=noverlap,
        detrend="constant", scaling="density",
    )
    return Psd(freqs, power)


def _check_band_on_grid(psd: Psd, band: Band):
    if band.low_hz < psd.freqs[0] or band.high_hz > psd.freqs[-1]:
        raise ValidationError(
            f"band [{band.low_hz}, {band.high_hz}] outside PSD grid "
            f"[{psd.freqs[0]}, {psd.freqs[-1]}]"
        )


def band_power(psd: Psd, band: Band) -> float:
    """Trapezoidal area under the PSD across the band's bins."""
    _check_band_on_grid(psd, band)
    sel = (psd.freqs >= band.low_hz) & (psd.freqs <= band.high_hz)
    if sel.sum() < 2:
        return 0.0
    return float(np.trapezoid(psd.power[sel], psd.freqs[sel]))


def total_power(psd: Psd) -> float:
    return float(np.trapezoid(psd.power, psd.freqs))


def relative_power(psd: Psd, band: Band) -> float:
    total = total_power(psd)
    if total <= 0:
        raise ValidationError("total power is zero; relative power undefined")
    return band_power(psd, band) / total


def power_ratio(psd: Psd, num: Band, den: Band) -> float:
    denominator = band_power(psd, den)
    if denominator <= 0:
        raise ValidationError("denominator band power is zero")
    return band_power(psd, num) / denominator


def amplitude_asymmetry(p_a: float, p_b: float) -> float:
    """Normalized power difference (a - b) / (a + b), in [-1, 1]."""
    if p_a + p_b <= 0:
        raise ValidationError("asymmetry undefined: both band powers are zero")
    return (p_a - p_b) / (p_a + p_b)


def hilbert_analytic(x) -> AnalyticSignal:
    """FFT-based analytic signal: instantaneous phase and envelope."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 4:
        raise ValidationError(f"need >= 4 samples for the analytic signal, got {x.shape[0]}")
    z = scipy.signal.hilbert(x)
    return AnalyticSignal(np.angle(z), np.abs(z))


def pac_profile(
    x, fs: float, f_low: Band, f_high: Band, n_bins: int = 18, taper_hz: float = 0.5
) -> PacProfile:
    """Phase-amplitude coupling profile.

    The low-band phase is binned uniformly over (-pi, pi]; P(j) is the mean
    high-band envelope in bin j normalized to sum 1. The modulation index is
    the normalized entropy deficit (log N - H(P)) / log N, 0 for a flat
    profile and 1 for a single-bin concentration. Empty bins contribute 0 and
    are recorded.
    """
    phase = hilbert_analytic(bandpass_series(x, fs, f_low, taper_hz)).phase
    envelope = hilbert_analytic(bandpass_series(x, fs, f_high, taper_hz)).envelope

    edges = np.linspace(-np.pi, np.pi, n_bins + 1)
    idx = np.clip(np.digitize(phase, edges, right=True) - 1, 0, n_bins - 1)
    sums = np.bincount(idx, weights=envelope, minlength=n_bins)
    counts = np.bincount(idx, minlength=n_bins)

    empty = np.flatnonzero(counts == 0)
    means = np.zeros(n_bins)
    np.divide(sums, counts, out=means, where=counts > 0)
    total = means.sum()
    if total <= 0:
        raise ValidationError("pac profile undefined: envelope is identically zero")
    p = means / total

    positive = p[p > 0]
    entropy = -float(np.sum(positive * np.log(positive)))
    mi = (np.log(n_bins) - entropy) / np.log(n_bins)
    return PacProfile(p, float(min(max(mi, 0.0), 1.0)), empty.tolist())


def coherence_spectrum(
    x, y, fs: float, seg_seconds: float = 2.0, overlap: float = 0.5
) -> tuple[np.ndarray, np.ndarray]:
    """Magnitude-squared coherence on the Welch grid; needs >= 2 segments."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise ValidationError("coherence needs equal-length signals")
    nperseg, noverlap = _welch_params(fs, seg_seconds, overlap)
    step = nperseg - noverlap
    n_segments = 1 + (x.shape[0] - nperseg) // step if x.shape[0] >= nperseg else 0
    if n_segments < 2:
        raise ValidationError(
            f"coherence needs >= 2 Welch segments, got {n_segments} "
            f"(signal too short for {seg_seconds}s segments)"
        )
    freqs, cxy = scipy.signal.coherence(
        x, y, fs=fs, window="hann", nperseg=nperseg, noverlap=noverlap, detrend="constant"
    )
    return freqs, cxy


def coherence(x, y, fs: float, band: Band, seg_seconds: float = 2.0, overlap: float = 0.5) -> float:
    """Band-averaged magnitude-squared coherence, in [0, 1]."""
    freqs, cxy = coherence_spectrum(x, y, fs, seg_seconds, overlap)
    sel = (freqs >= band.low_hz) & (freqs <= band.high_hz)
    if not sel.any():
        raise ValidationError(f"band [{band.low_hz}, {band.high_hz}] has no coherence bins")
    return float(cxy[sel].mean())


def plv(x, y, fs: float, band: Band, taper_hz: float = 0.5) -> float:
    """Phase locking value of the band-filtered phase difference, in [0, 1]."""
    p1 = hilbert_analytic(bandpass_series(x, fs, band, taper_hz)).phase
    p2 = hilbert_analytic(bandpass_series(y, fs, band, taper_hz)).phase
    return float(np.abs(np.mean(np.exp(1j * (p1 - p2)))))


def hjorth(x, fs: float) -> tuple[float, float, float]:
    """Hjorth activity, mobility, complexity of a 1-D series."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 3:
        raise ValidationError(f"need >= 3 samples for Hjorth parameters, got {x.shape[0]}")
    dx = np.diff(x) * fs
    ddx = np.diff(dx) * fs
    var_x, var_dx, var_ddx = x.var(), dx.var(), ddx.var()
    if var_x == 0:
        raise ValidationError("Hjorth parameters undefined for a constant signal")
    activity = var_x
    mobility = np.sqrt(var_dx / var_x)
    complexity = np.sqrt(var_ddx / var_dx) / mobility
    return float(activity), float(mobility), float(complexity)


def spectral_entropy(x, fs: float, seg_seconds: float = 2.0, overlap: float = 0.5) -> float:
    """Shannon entropy of the normalized PSD, scaled to [0, 1] by log2(n_bins)."""
    psd = welch_psd(x, fs, seg_seconds, overlap)
    return _entropy_from_psd(psd)


def _entropy_from_psd(psd: Psd) -> float:
    total = psd.power.sum()
    if total <= 0:
        raise ValidationError("spectral entropy undefined for an all-zero signal")
    p = psd.power / total
    positive = p[p > 0]
    h = -float(np.sum(positive * np.log2(positive)))
    return h / np.log2(p.shape[0])


def _with_context(name: str, fn):
    try:
        return fn()
    except TeaShiftError as exc:
        raise type(exc)(f"{name}: {exc}") from exc


def feature_names(n_channels: int, config: FeatureConfig = FeatureConfig()) -> list[str]:
    """Deterministic feature-name order for a given channel count and config."""
    names = []
    for c in range(n_channels):
        for band_name, _ in config.bands:
            names.append(f"ch{c}_{band_name}_abs_power")
            names.append(f"ch{c}_{band_name}_rel_power")
        for ratio_name, _, _ in config.ratios:
            names.append(f"ch{c}_ratio_{ratio_name}")
        names.append(f"ch{c}_hjorth_activity")
        names.append(f"ch{c}_hjorth_mobility")
        names.append(f"ch{c}_hjorth_complexity")
        names.append(f"ch{c}_spectral_entropy")
        names.append(f"ch{c}_pac_mi")
    for a in range(n_channels):
        for b in range(a + 1, n_channels):
            for band_name, _ in config.bands:
                names.append(f"ch{a}_ch{b}_{band_name}_coherence")
                names.append(f"ch{a}_ch{b}_{band_name}_plv")
                names.append(f"ch{a}_ch{b}_{band_name}_asymmetry")
    return names


def extract_features(epoch: Epoch, config: FeatureConfig = FeatureConfig()) -> FeatureVector:
    """Compute the full per-epoch feature vector (pairwise features need >= 2 channels)."""
    fs = epoch.fs
    seg, ov, taper = config.welch_seg_seconds, config.welch_overlap, config.taper_hz
    values: list[float] = []

    psds = [
        _with_context(f"ch{c}_psd", lambda c=c: welch_psd(epoch.samples[c], fs, seg, ov))
        for c in range(epoch.n_channels)
    ]
    abs_powers = [
        {name: band_power(psds[c], band) for name, band in config.bands}
        for c in range(epoch.n_channels)
    ]

    for c in range(epoch.n_channels):
        x = epoch.samples[c]
        total = _with_context(f"ch{c}_rel_power", lambda c=c: total_power(psds[c]))
        if total <= 0:
            raise ValidationError(f"ch{c}_rel_power: total power is zero")
        for band_name, band in config.bands:
            values.append(abs_powers[c][band_name])
            values.append(abs_powers[c][band_name] / total)
        for ratio_name, num, den in config.ratios:
            values.append(
                _with_context(
                    f"ch{c}_ratio_{ratio_name}",
                    lambda c=c, num=num, den=den: power_ratio(psds[c], num, den),
                )
            )
        values.extend(_with_context(f"ch{c}_hjorth", lambda c=c, x=x: hjorth(x, fs)))
        values.append(_with_context(f"ch{c}_spectral_entropy", lambda c=c: _entropy_from_psd(psds[c])))
        values.append(
            _with_context(
                f"ch{c}_pac_mi",
                lambda x=x: pac_profile(x, fs, config.pac_low, config.pac_high, config.pac_bins, taper).mi,
            )
        )

    if epoch.n_channels >= 2:
        phases: dict[tuple[int, str], np.ndarray] = {}

        def band_phase(c: int, band_name: str, band: Band) -> np.ndarray:
            key = (c, band_name)
            if key not in phases:
                phases[key] = hilbert_analytic(
                    bandpass_series(epoch.samples[c], fs, band, taper)
                ).phase
            return phases[key]

        for a in range(epoch.n_channels):
            for b in range(a + 1, epoch.n_channels):
                freqs_c, cxy = _with_context(
                    f"ch{a}_ch{b}_coherence",
                    lambda a=a, b=b: coherence_spectrum(epoch.samples[a], epoch.samples[b], fs, seg, ov),
                )
                for band_name, band in config.bands:
                    sel = (freqs_c >= band.low_hz) & (freqs_c <= band.high_hz)
                    values.append(float(cxy[sel].mean()))
                    p1 = band_phase(a, band_name, band)
                    p2 = band_phase(b, band_name, band)
                    values.append(float(np.abs(np.mean(np.exp(1j * (p1 - p2))))))
                    values.append(
                        _with_context(
                            f"ch{a}_ch{b}_{band_name}_asymmetry",
                            lambda a=a, b=b, bn=band_name: amplitude_asymmetry(
                                abs_powers[a][bn], abs_powers[b][bn]
                            ),
                        )
                    )

    names = feature_names(epoch.n_channels, config)
    vec = np.asarray(values, dtype=np.float64)
    if vec.shape[0] != len(names):
        raise TeaShiftError(
            f"feature assembly produced {vec.shape[0]} values for {len(names)} names"
        )
    if not np.all(np.isfinite(vec)):
        bad = [names[i] for i in np.flatnonzero(~np.isfinite(vec))]
        raise ValidationError(f"non-finite feature values: {bad}")
    return FeatureVector(vec, names)


def extract_matrix(epochs: list[Epoch], config: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    """Stack per-epoch feature vectors into a FeatureMatrix."""
    return FeatureMatrix.from_vectors([extract_features(e, config) for e in epochs])
