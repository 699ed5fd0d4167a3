"""Dataset model, on-disk format, and the seeded synthetic-EEG generator.

A Dataset is a named collection of SubjectRecords; each subject carries
labeled epochs of shape (n_channels, n_samples). Synthetic datasets stand in
for clinical recordings: band-limited noise with a controllable slow-wave
power boost for the TBI class and dataset-level gain/tilt covariate shifts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from teashift.errors import NonFiniteDataError, ShapeMismatchError, ValidationError


class SleepStage(str, Enum):
    W = "W"
    NREM = "NREM"
    REM = "REM"
    N1 = "N1"
    N2 = "N2"
    N3 = "N3"

    def collapsed(self) -> "SleepStage":
        """Collapse the N1/N2/N3 sub-stages into NREM (idempotent)."""
        if self in (SleepStage.N1, SleepStage.N2, SleepStage.N3):
            return SleepStage.NREM
        return self


class Species(str, Enum):
    MOUSE = "Mouse"
    HUMAN = "Human"
    SYNTHETIC = "Synthetic"


class Group(str, Enum):
    TBI = "TBI"
    CONTROL = "Control"


@dataclass(eq=False)
class Epoch:
    """One trial: (n_channels, n_samples) voltages in microvolts at rate fs."""

    samples: np.ndarray
    fs: float
    stage: SleepStage

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ValidationError(f"samples must be 2-D, got shape {self.samples.shape}")
        if self.samples.shape[0] < 1:
            raise ValidationError("epoch needs at least one channel")
        if self.samples.shape[1] < 2:
            raise ValidationError("epoch needs at least two samples")
        if not self.fs > 0:
            raise ValidationError(f"fs must be positive, got {self.fs}")
        if not np.all(np.isfinite(self.samples)):
            raise NonFiniteDataError("epoch contains non-finite samples")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Epoch):
            return NotImplemented
        return (
            self.fs == other.fs
            and self.stage == other.stage
            and np.array_equal(self.samples, other.samples)
        )


@dataclass(eq=False)
class SubjectRecord:
    subject_id: str
    species: Species
    age_years: float
    group: Group
    epochs: list[Epoch] = field(default_factory=list)

    def __post_init__(self):
        if not self.age_years > 0:
            raise ValidationError(f"age_years must be positive, got {self.age_years}")
        shapes = {(e.n_channels, e.fs) for e in self.epochs}
        if len(shapes) > 1:
            raise ValidationError(
                f"subject {self.subject_id!r}: epochs disagree on (n_channels, fs): {sorted(shapes)}"
            )

    def __eq__(self, other):
        if not isinstance(other, SubjectRecord):
            return NotImplemented
        return (
            self.subject_id == other.subject_id
            and self.species == other.species
            and self.age_years == other.age_years
            and self.group == other.group
            and self.epochs == other.epochs
        )


@dataclass(eq=False)
class Dataset:
    name: str
    subjects: list[SubjectRecord]

    def __post_init__(self):
        ids = [s.subject_id for s in self.subjects]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"duplicate subject_id(s): {dupes}")

    @property
    def n_epochs(self) -> int:
        return sum(len(s.epochs) for s in self.subjects)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.name == other.name and self.subjects == other.subjects


# Band edges and relative amplitudes of the generator's noise components.
# Rough 1/f weighting; the slow band carries the class effect.
_GEN_BANDS = (
    (0.5, 4.0, 1.0),
    (4.0, 8.0, 0.65),
    (8.0, 12.0, 0.45),
    (12.0, 16.0, 0.30),
    (12.0, 35.0, 0.25),
)
_GEN_MAX_HZ = max(hi for _, hi, _ in _GEN_BANDS)
# Channels of one epoch share a common component (EEG electrodes are strongly
# correlated); the mix keeps per-channel variance unchanged.
_CHANNEL_RHO = 0.7
_STAGE_CYCLE = (SleepStage.W, SleepStage.NREM, SleepStage.REM)


@dataclass
class SynthSpec:
    """Parameters of the synthetic-EEG generator.

    class_effect boosts delta-band power of TBI subjects by (1 + class_effect);
    shift_gain / shift_tilt apply a dataset-wide amplitude gain and spectral
    slope change, modeling a dataset-level covariate shift; subject_sigma is
    the log-std of the per-subject random gain.
    """

    n_subjects_per_group: int = 6
    epochs_per_subject: int = 50
    n_channels: int = 2
    fs: float = 128.0
    epoch_seconds: float = 4.0
    class_effect: float = 0.5
    shift_gain: float = 1.0
    shift_tilt: float = 0.0
    subject_sigma: float = 0.1
    seed: int = 0
    name: str = "synth"
    species: Species = Species.SYNTHETIC

    def validate(self):
        for fld in ("n_subjects_per_group", "epochs_per_subject", "n_channels"):
            if getattr(self, fld) < 1:
                raise ValidationError(f"{fld} must be >= 1, got {getattr(self, fld)}")
        if not self.fs > 2 * _GEN_MAX_HZ:
            raise ValidationError(
                f"fs must exceed twice the highest generated frequency "
                f"({2 * _GEN_MAX_HZ} Hz), got {self.fs}"
            )
        if not self.epoch_seconds > 0:
            raise ValidationError(f"epoch_seconds must be positive, got {self.epoch_seconds}")
        if self.class_effect < 0:
            raise ValidationError(f"class_effect must be >= 0, got {self.class_effect}")
        if self.shift_gain <= 0:
            raise ValidationError(f"shift_gain must be positive, got {self.shift_gain}")
        if self.subject_sigma < 0:
            raise ValidationError(f"subject_sigma must be >= 0, got {self.subject_sigma}")


def _band_noise(rng, n_samples, fs, low, high):
    """Unit-variance (in expectation) Gaussian noise confined to [low, high] Hz."""
    white = rng.standard_normal(n_samples)
    spec = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n_samples, 1.0 / fs)
    spec[(freqs < low) | (freqs > high)] = 0.0
    shaped = np.fft.irfft(spec, n=n_samples)
    frac = (min(high, fs / 2) - low) / (fs / 2)
    return shaped / np.sqrt(frac)


def synth_dataset(spec: SynthSpec) -> Dataset:
    """Generate a deterministic synthetic dataset from spec (pure in the seed).

    Samples are quantized to float32 so a write/load round trip is exact.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.epoch_seconds * spec.fs))

    band_amps = []
    for low, high, weight in _GEN_BANDS:
        center = 0.5 * (low + high)
        band_amps.append(weight * (center / 8.0) ** (spec.shift_tilt / 2.0))

    subjects = []
    for group, tag in ((Group.TBI, "tbi"), (Group.CONTROL, "ctl")):
        for s in range(spec.n_subjects_per_group):
            age = float(rng.uniform(20.0, 80.0))
            gain = float(np.exp(spec.subject_sigma * rng.standard_normal()))
            epochs = []
            for e in range(spec.epochs_per_subject):
                x = np.zeros((spec.n_channels, n))
                shared = None
                if spec.n_channels > 1:
                    shared = [
                        _band_noise(rng, n, spec.fs, low, high) for low, high, _ in _GEN_BANDS
                    ]
                for c in range(spec.n_channels):
                    for b, ((low, high, _), amp) in enumerate(zip(_GEN_BANDS, band_amps)):
                        if group is Group.TBI and low == 0.5:
                            amp = amp * np.sqrt(1.0 + spec.class_effect)
                        component = _band_noise(rng, n, spec.fs, low, high)
                        if shared is not None:
                            component = (
                                np.sqrt(_CHANNEL_RHO) * shared[b]
                                + np.sqrt(1.0 - _CHANNEL_RHO) * component
                            )
                        x[c] += amp * component
                x *= gain * spec.shift_gain
                x = x.astype(np.float32).astype(np.float64)
                epochs.append(Epoch(x, spec.fs, _STAGE_CYCLE[e % len(_STAGE_CYCLE)]))
            subjects.append(
                SubjectRecord(f"{tag}{s:02d}", spec.species, age, group, epochs)
            )
    return Dataset(spec.name, subjects)


def write_dataset(dataset: Dataset, path) -> None:
    """Write manifest.json plus one float32-LE payload file per subject.

    Payload layout: epochs concatenated row-major [epoch][channel][sample],
    no header; the manifest carries the shapes needed to slice it back.
    """
    root = Path(path)
    (root / "epochs").mkdir(parents=True, exist_ok=True)

    manifest = {"name": dataset.name, "subjects": []}
    for subject in dataset.subjects:
        entry = {
            "subject_id": subject.subject_id,
            "species": subject.species.value,
            "age_years": subject.age_years,
            "group": subject.group.value,
            "fs_hz": subject.epochs[0].fs if subject.epochs else None,
            "n_channels": subject.epochs[0].n_channels if subject.epochs else None,
            "epochs": [{"stage": e.stage.value, "n_samples": e.n_samples} for e in subject.epochs],
        }
        manifest["subjects"].append(entry)
        payload = (
            np.concatenate([e.samples.astype("<f4").ravel() for e in subject.epochs])
            if subject.epochs
            else np.empty(0, dtype="<f4")
        )
        payload.tofile(root / "epochs" / f"{subject.subject_id}.f32")

    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_dataset(path) -> Dataset:
    """Load a dataset directory written by write_dataset.

    Raises FileNotFoundError for missing files, ShapeMismatchError when the
    manifest shapes disagree with payload byte length, NonFiniteDataError for
    NaN/inf samples, and ValidationError for malformed manifest fields.
    """
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest at {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)

    subjects = []
    for entry in manifest.get("subjects", []):
        try:
            species = Species(entry["species"])
            group = Group(entry["group"])
            stages = [SleepStage(e["stage"]) for e in entry["epochs"]]
        except (KeyError, ValueError) as exc:
            raise ValidationError(f"malformed manifest entry: {exc}") from exc

        payload_path = root / "epochs" / f"{entry['subject_id']}.f32"
        if not payload_path.exists():
            raise FileNotFoundError(f"missing payload {payload_path}")
        flat = np.fromfile(payload_path, dtype="<f4")

        n_channels = entry["n_channels"]
        expected = sum(n_channels * e["n_samples"] for e in entry["epochs"]) if entry["epochs"] else 0
        if flat.size != expected:
            raise ShapeMismatchError(
                f"subject {entry['subject_id']!r}: manifest declares {expected} samples, "
                f"payload holds {flat.size}"
            )
        if not np.all(np.isfinite(flat)):
            raise NonFiniteDataError(f"subject {entry['subject_id']!r}: non-finite samples")

        epochs = []
        offset = 0
        for stage, e in zip(stages, entry["epochs"]):
            size = n_channels * e["n_samples"]
            block = flat[offset : offset + size].astype(np.float64)
            epochs.append(Epoch(block.reshape(n_channels, e["n_samples"]), entry["fs_hz"], stage))
            offset += size
        subjects.append(
            SubjectRecord(entry["subject_id"], species, entry["age_years"], group, epochs)
        )
    return Dataset(manifest["name"], subjects)


def filter_by_stage(dataset: Dataset, stage: SleepStage) -> Dataset:
    """Keep only epochs of the requested stage; NREM pools N1/N2/N3.

    Subjects left with no epochs are dropped.
    """
    subjects = []
    for subject in dataset.subjects:
        if stage is SleepStage.NREM:
            kept = [e for e in subject.epochs if e.stage.collapsed() is SleepStage.NREM]
        else:
            kept = [e for e in subject.epochs if e.stage is stage]
        if kept:
            subjects.append(replace(subject, epochs=kept))
    return Dataset(dataset.name, subjects)
