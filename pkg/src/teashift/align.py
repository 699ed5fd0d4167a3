"""Transfer Euclidean Alignment.

A dataset's reference matrix is the subject-averaged second moment of its
trials (raw epochs, channels x samples, or feature vectors as d x 1 columns).
Whitening every trial by the inverse square root of that reference drives the
mean second moment of each dataset to the identity, so datasets aligned this
way share a common Euclidean geometry regardless of their original scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from teashift.data import Dataset, Epoch, SubjectRecord
from teashift.errors import ValidationError


class Space(str, Enum):
    RAW = "raw"
    FEATURE = "feature"


@dataclass
class ReferenceMatrix:
    """Subject-averaged second moment plus provenance."""

    matrix: np.ndarray
    space: Space
    source: str  # dataset name
    lam: float  # shrinkage used


@dataclass
class AlignmentTransform:
    """The whitening factor reference^(-1/2) plus provenance."""

    w: np.ndarray
    space: Space
    source: str
    lam: float

    def to_json(self) -> dict:
        return {
            "d": int(self.w.shape[0]),
            "matrix": self.w.ravel().tolist(),  # row-major float64
            "space": self.space.value,
            "source": self.source,
            "lambda": self.lam,
        }

    @classmethod
    def from_json(cls, d: dict) -> "AlignmentTransform":
        n = int(d["d"])
        w = np.asarray(d["matrix"], dtype=np.float64).reshape(n, n)
        return cls(w, Space(d["space"]), d["source"], d["lambda"])


def subject_second_moment(trials) -> np.ndarray:
    """Mean over trials of the per-sample second moment X X^T / n_samples.

    Uncentered by design: with this convention self-alignment reduces the mean
    second moment to the identity exactly. Feature vectors enter as d x 1
    columns, where the per-trial moment is just the outer product.
    """
    if len(trials) == 0:
        raise ValidationError("subject has no trials")
    d = None
    acc = None
    for trial in trials:
        x = np.asarray(trial, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if d is None:
            d = x.shape[0]
            acc = np.zeros((d, d))
        elif x.shape[0] != d:
            raise ValidationError(
                f"trial dimension mismatch: expected {d}, got {x.shape[0]}"
            )
        acc += (x @ x.T) / x.shape[1]
    return acc / len(trials)


def _shrink(matrix: np.ndarray, lam: float) -> np.ndarray:
    if lam == 0:
        return matrix
    d = matrix.shape[0]
    return (1.0 - lam) * matrix + lam * (np.trace(matrix) / d) * np.eye(d)


def reference_from_subject_trials(
    subject_trials: list[list], space: Space, lam: float = 1e-3, source: str = ""
) -> ReferenceMatrix:
    """Equal-weight average of per-subject second moments, then shrinkage.

    Subjects contribute equally regardless of their trial counts.
    """
    moments = [subject_second_moment(trials) for trials in subject_trials if len(trials) > 0]
    if not moments:
        raise ValidationError("no subject has any trials")
    mean = np.mean(moments, axis=0)
    return ReferenceMatrix(_shrink(mean, lam), space, source, lam)


def dataset_reference_matrix(
    dataset: Dataset,
    space: Space,
    lam: float = 1e-3,
    features_by_subject: dict[str, np.ndarray] | None = None,
) -> ReferenceMatrix:
    """Reference matrix of a dataset in raw-trial or feature space.

    Feature space needs features_by_subject: subject_id -> (n_epochs, n_features)
    rows, since feature extraction lives upstream of this module.
    """
    if space is Space.RAW:
        subject_trials = [[e.samples for e in s.epochs] for s in dataset.subjects]
    else:
        if features_by_subject is None:
            raise ValidationError("feature-space reference needs features_by_subject")
        subject_trials = [
            [row for row in features_by_subject[s.subject_id]]
            for s in dataset.subjects
            if s.subject_id in features_by_subject
        ]
    return reference_from_subject_trials(subject_trials, space, lam, dataset.name)


def inv_sqrt(m: np.ndarray, eps_rel: float = 1e-10) -> np.ndarray:
    """Inverse square root of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues below eps_rel * max eigenvalue are floored there, so nearly
    singular inputs yield a finite (regularized) result.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max()))
    if float(np.abs(m - m.T).max()) > 1e-10 * scale:
        raise ValidationError("matrix is not symmetric")
    eigvals, eigvecs = np.linalg.eigh((m + m.T) / 2.0)
    lmax = eigvals[-1]
    if lmax <= 0:
        raise ValidationError("matrix has no positive eigenvalue; cannot whiten")
    clamped = np.maximum(eigvals, eps_rel * lmax)
    return (eigvecs / np.sqrt(clamped)) @ eigvecs.T


def alignment_transform(ref: ReferenceMatrix, eps_rel: float = 1e-10) -> AlignmentTransform:
    return AlignmentTransform(inv_sqrt(ref.matrix, eps_rel), ref.space, ref.source, ref.lam)


def align_trials(trials, transform: AlignmentTransform) -> list[np.ndarray]:
    """Left-multiply every trial by the whitening factor; shapes unchanged."""
    out = []
    for trial in trials:
        x = np.asarray(trial, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[:, None]
        if x.shape[0] != transform.w.shape[0]:
            raise ValidationError(
                f"trial dimension {x.shape[0]} does not match transform "
                f"dimension {transform.w.shape[0]}"
            )
        aligned = transform.w @ x
        out.append(aligned[:, 0] if squeeze else aligned)
    return out


def align_dataset(dataset: Dataset, transform: AlignmentTransform) -> Dataset:
    """Apply a raw-space transform to every epoch of a dataset."""
    subjects = []
    for s in dataset.subjects:
        epochs = [Epoch(transform.w @ e.samples, e.fs, e.stage) for e in s.epochs]
        subjects.append(SubjectRecord(s.subject_id, s.species, s.age_years, s.group, epochs))
    return Dataset(dataset.name, subjects)


def align_feature_rows(values: np.ndarray, transform: AlignmentTransform) -> np.ndarray:
    """Whiten feature-row vectors: each row x becomes W x."""
    return values @ transform.w.T


def residual_identity(
    dataset: Dataset,
    space: Space,
    features_by_subject: dict[str, np.ndarray] | None = None,
) -> float:
    """Max |deviation| of the dataset's unshrunk mean second moment from I."""
    ref = dataset_reference_matrix(dataset, space, lam=0.0, features_by_subject=features_by_subject)
    return float(np.abs(ref.matrix - np.eye(ref.matrix.shape[0])).max())
