"""Feature normalization and selection.

Pipeline order is fixed: logit-family transforms, then age regression against
log10(age) fitted on the norming (control) group, then z-scoring with
statistics from the training rows only. Selection is recursive feature
elimination with the random forest as the base estimator.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from teashift.errors import ValidationError
from teashift.features import FeatureMatrix, FeatureVector
from teashift.models import forest_fit

CLIP_EPS = 1e-6


class TransformKind(Enum):
    REL_POWER = "rel_power"
    COHERENCE = "coherence"
    ASYMMETRY = "asymmetry"
    SPECTRAL_ENTROPY = "spectral_entropy"
    NONE = "none"


def kind_for_name(name: str) -> TransformKind:
    """Map a feature name to its transform; total over the feature-name space."""
    if name.endswith("_rel_power"):
        return TransformKind.REL_POWER
    if name.endswith("_coherence"):
        return TransformKind.COHERENCE
    if name.endswith("_asymmetry"):
        return TransformKind.ASYMMETRY
    if name.endswith("_spectral_entropy"):
        return TransformKind.SPECTRAL_ENTROPY
    return TransformKind.NONE


def logit_transform(value, kind: TransformKind, eps: float = CLIP_EPS):
    """Skew-reducing transform for bounded features; monotone on its domain.

    Unit-interval features map through log(v / (1 - v)) (entropy through
    -log(1 - v)); asymmetry maps through log((2 + v) / (2 - v)). Inputs are
    clipped eps inside the open domain first, so the result is always finite.
    """
    if kind is TransformKind.NONE:
        return value
    if kind is TransformKind.ASYMMETRY:
        v = np.clip(value, -2.0 + eps, 2.0 - eps)
        return np.log((2.0 + v) / (2.0 - v))
    v = np.clip(value, eps, 1.0 - eps)
    if kind is TransformKind.SPECTRAL_ENTROPY:
        return -np.log(1.0 - v)
    return np.log(v / (1.0 - v))


def transform_matrix(fm: FeatureMatrix, eps: float = CLIP_EPS) -> tuple[FeatureMatrix, int]:
    """Apply the per-kind transforms columnwise; returns the clip count too."""
    out = fm.values.copy()
    clipped = 0
    for j, name in enumerate(fm.names):
        kind = kind_for_name(name)
        if kind is TransformKind.NONE:
            continue
        col = fm.values[:, j]
        if kind is TransformKind.ASYMMETRY:
            clipped += int(np.sum((col < -2.0 + eps) | (col > 2.0 - eps)))
        else:
            clipped += int(np.sum((col < eps) | (col > 1.0 - eps)))
        out[:, j] = logit_transform(col, kind, eps)
    return FeatureMatrix(out, list(fm.names)), clipped


@dataclass
class AgeModel:
    """Per-feature age-regression slopes against log10(age in years)."""

    slopes: np.ndarray
    intercepts: np.ndarray
    names: list[str]
    norming_group: str

    def to_json(self) -> dict:
        return {
            "slopes": self.slopes.tolist(),
            "intercepts": self.intercepts.tolist(),
            "names": list(self.names),
            "norming_group": self.norming_group,
        }

    @classmethod
    def from_json(cls, d: dict) -> "AgeModel":
        return cls(
            np.asarray(d["slopes"], dtype=np.float64),
            np.asarray(d["intercepts"], dtype=np.float64),
            list(d["names"]),
            d["norming_group"],
        )


def fit_age_regression(
    features: FeatureMatrix, ages, norming_group: str = "Control"
) -> AgeModel:
    """Least-squares slope of every feature against log10(age), on control rows."""
    ages = np.asarray(ages, dtype=np.float64)
    if ages.shape[0] != features.values.shape[0]:
        raise ValidationError(
            f"{ages.shape[0]} ages for {features.values.shape[0]} feature rows"
        )
    if np.any(ages <= 0):
        raise ValidationError("ages must be positive")
    if np.unique(ages).size < 2:
        raise ValidationError("age-regression slope undefined: all ages equal")
    design = np.column_stack([np.ones_like(ages), np.log10(ages)])
    coef, *_ = np.linalg.lstsq(design, features.values, rcond=None)
    return AgeModel(coef[1], coef[0], list(features.names), norming_group)


def apply_age_regression(
    features, age, model: AgeModel, subtract_intercept: bool = False
):
    """Remove the fitted age trend: y = x - log10(age) * slope (per feature).

    subtract_intercept additionally removes the norming-group intercept.
    """
    offset = model.intercepts if subtract_intercept else 0.0
    if isinstance(features, FeatureVector):
        if not age > 0:
            raise ValidationError(f"age must be positive, got {age}")
        if features.names != model.names:
            raise ValidationError("feature names do not match the age model")
        return FeatureVector(
            features.values - np.log10(age) * model.slopes - offset, list(features.names)
        )
    ages = np.asarray(age, dtype=np.float64)
    if np.any(ages <= 0):
        raise ValidationError("ages must be positive")
    if features.names != model.names:
        raise ValidationError("feature names do not match the age model")
    return FeatureMatrix(
        features.values - np.log10(ages)[:, None] * model.slopes - offset,
        list(features.names),
    )


@dataclass
class Standardizer:
    """Per-feature mean/std from training rows; degenerate columns are dropped."""

    mean: np.ndarray
    std: np.ndarray
    names: list[str]
    dropped_names: list[str]

    def to_json(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "names": list(self.names),
            "dropped_names": list(self.dropped_names),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Standardizer":
        return cls(
            np.asarray(d["mean"], dtype=np.float64),
            np.asarray(d["std"], dtype=np.float64),
            list(d["names"]),
            list(d["dropped_names"]),
        )


def standardize_fit(train: FeatureMatrix) -> Standardizer:
    """Fit per-column mean and population std on training rows only."""
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0)
    keep = std > 1e-12 * (1.0 + np.abs(mean))
    dropped = [n for n, k in zip(train.names, keep) if not k]
    if dropped:
        warnings.warn(f"dropping {len(dropped)} zero-variance feature(s): {dropped}")
    kept_names = [n for n, k in zip(train.names, keep) if k]
    return Standardizer(mean[keep], std[keep], kept_names, dropped)


def standardize_apply(features, standardizer: Standardizer):
    """Apply (x - mean) / std using the fitted statistics; drops dead columns."""
    if isinstance(features, FeatureVector):
        matrix = FeatureMatrix(features.values[np.newaxis, :], list(features.names))
        out = standardize_apply(matrix, standardizer)
        return FeatureVector(out.values[0], out.names)
    idx = [features.names.index(n) for n in standardizer.names]
    values = (features.values[:, idx] - standardizer.mean) / standardizer.std
    return FeatureMatrix(values, list(standardizer.names))


@dataclass
class RfeResult:
    selected: list[int]  # surviving original column indices, ascending
    elimination_order: list[int]  # dropped original indices, first dropped first


def rfe_select(
    features: FeatureMatrix,
    labels,
    target_k: int,
    step: int = 1,
    seed: int = 0,
    n_trees: int = 100,
    max_depth: int | None = None,
    min_leaf: int = 1,
) -> RfeResult:
    """Recursive feature elimination with random-forest importance.

    Each round fits a forest on the surviving columns and drops the `step`
    lowest-importance features until target_k remain. Deterministic per seed.
    """
    x = features.values
    labels = np.asarray(labels)
    n_features = x.shape[1]
    if not 1 <= target_k <= n_features:
        raise ValidationError(f"target_k must be in [1, {n_features}], got {target_k}")
    if step < 1:
        raise ValidationError(f"step must be >= 1, got {step}")
    if np.unique(labels).size < 2:
        raise ValidationError("rfe needs at least two label classes")

    remaining = list(range(n_features))
    eliminated: list[int] = []
    round_seeds = np.random.SeedSequence(seed).generate_state(
        max(1, -(-(n_features - target_k) // step))
    )
    round_no = 0
    while len(remaining) > target_k:
        model = forest_fit(
            x[:, remaining],
            labels,
            n_trees=n_trees,
            max_depth=max_depth,
            min_leaf=min_leaf,
            seed=int(round_seeds[round_no]),
        )
        round_no += 1
        n_drop = min(step, len(remaining) - target_k)
        # lowest importance first; ties resolved by original column index
        order = sorted(range(len(remaining)), key=lambda i: (model.importance_[i], remaining[i]))
        dropped = {remaining[i] for i in order[:n_drop]}
        eliminated.extend(remaining[i] for i in order[:n_drop])
        remaining = [f for f in remaining if f not in dropped]
    return RfeResult(remaining, eliminated)
