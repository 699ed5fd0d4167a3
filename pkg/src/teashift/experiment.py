"""End-to-end covariate-shift experiments and report emission.

run_intra trains on a source dataset and evaluates on held-out target subject
pairs, with and without alignment, over identical folds. run_inter compares
three training regimes on a channel-averaged target: target-only, pooled
source+target, and pooled after alignment. Reports are plain dicts with a
stable JSON form: same config and seed produce byte-identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from teashift import __version__
from teashift.align import (
    Space,
    align_dataset,
    align_feature_rows,
    alignment_transform,
    dataset_reference_matrix,
    reference_from_subject_trials,
)
from teashift.data import (
    Dataset,
    Group,
    SleepStage,
    Species,
    SynthSpec,
    filter_by_stage,
    load_dataset,
    synth_dataset,
)
from teashift.errors import ValidationError
from teashift.features import Band, FeatureConfig, FeatureMatrix, extract_features
from teashift.models import (
    Metrics,
    cart_fit,
    evaluate,
    forest_fit,
    knn_fit,
    plan_independent_validation,
)
from teashift.normalize import (
    fit_age_regression,
    apply_age_regression,
    standardize_apply,
    standardize_fit,
    transform_matrix,
)
from teashift.preprocess import dba_average_channels, fft_bandpass, reject_epochs, resample

DEFAULT_MODELS = (
    {"kind": "knn", "k": 5},
    {"kind": "knn", "k": 11},
    {"kind": "knn", "k": 19},
    {"kind": "cart"},
    {"kind": "forest"},
)


@dataclass
class ModelSpec:
    kind: str
    params: dict

    @property
    def model_id(self) -> str:
        if self.kind == "knn":
            return f"knn_k{self.params['k']}"
        return self.kind


@dataclass
class ExperimentConfig:
    source: dict
    target: dict
    seed: int
    stages: list[SleepStage]
    models: list[ModelSpec]
    space: Space = Space.FEATURE
    lam: float = 1e-3
    n_folds: int = 15
    reject: bool = True
    z_thresh: float = 3.0
    filter_band: Band | None = None
    age_regression: bool = False
    normalize_scope: str = "train"  # "train" or "per_dataset"
    feature_config: FeatureConfig = FeatureConfig()
    dba_max_iters: int = 10
    dba_tol: float = 1e-6
    dba_window: int | None = None


_SYNTH_FIELDS = {
    "n_subjects_per_group", "epochs_per_subject", "n_channels", "fs",
    "epoch_seconds", "class_effect", "shift_gain", "shift_tilt",
    "subject_sigma", "seed", "name", "species",
}


def synth_spec_from_dict(d: dict, default_seed: int | None = None) -> SynthSpec:
    unknown = set(d) - _SYNTH_FIELDS
    if unknown:
        raise ValidationError(f"unknown synth spec field(s): {sorted(unknown)}")
    kwargs = dict(d)
    if "species" in kwargs:
        kwargs["species"] = Species(kwargs["species"])
    if "seed" not in kwargs:
        if default_seed is None:
            raise ValidationError("synth spec needs a seed")
        kwargs["seed"] = default_seed
    spec = SynthSpec(**kwargs)
    spec.validate()
    return spec


def resolve_dataset(d: dict, default_seed: int | None = None) -> Dataset:
    """Materialize a dataset from {"path": dir} or {"synth": {...spec...}}."""
    if not isinstance(d, dict) or ("path" in d) == ("synth" in d):
        raise ValidationError('dataset must be {"path": ...} or {"synth": {...}}')
    if "path" in d:
        return load_dataset(d["path"])
    return synth_dataset(synth_spec_from_dict(d["synth"], default_seed))


def _feature_config_from_dict(d: dict) -> FeatureConfig:
    kwargs = {}
    if "bands" in d:
        kwargs["bands"] = tuple((name, Band(*edges)) for name, edges in d["bands"].items())
    if "ratios" in d:
        kwargs["ratios"] = tuple(
            (name, Band(*num), Band(*den)) for name, num, den in d["ratios"]
        )
    for key in ("welch_seg_seconds", "welch_overlap", "pac_bins", "taper_hz"):
        if key in d:
            kwargs[key] = d[key]
    if "pac_low" in d:
        kwargs["pac_low"] = Band(*d["pac_low"])
    if "pac_high" in d:
        kwargs["pac_high"] = Band(*d["pac_high"])
    unknown = set(d) - {"bands", "ratios", "welch_seg_seconds", "welch_overlap",
                        "pac_bins", "taper_hz", "pac_low", "pac_high"}
    if unknown:
        raise ValidationError(f"unknown feature config field(s): {sorted(unknown)}")
    return FeatureConfig(**kwargs)


def parse_experiment_config(raw: dict, seed_override: int | None = None) -> ExperimentConfig:
    """Validate a JSON config document; error messages name the bad field."""
    if not isinstance(raw, dict):
        raise ValidationError("config must be a JSON object")
    for key in ("source", "target"):
        if key not in raw:
            raise ValidationError(f"config is missing {key!r}")
    seed = seed_override if seed_override is not None else raw.get("seed")
    if seed is None:
        raise ValidationError("config needs a seed (field 'seed' or --seed)")

    stages = [SleepStage(s) for s in raw.get("stages", ["W", "NREM", "REM"])]
    models_raw = raw.get("models", list(DEFAULT_MODELS))
    if not models_raw:
        raise ValidationError("config needs at least one model")
    models = []
    for m in models_raw:
        kind = m.get("kind")
        if kind not in ("knn", "cart", "forest"):
            raise ValidationError(f"unknown model kind: {kind!r}")
        if kind == "knn" and "k" not in m:
            raise ValidationError("knn model spec needs 'k'")
        models.append(ModelSpec(kind, {k: v for k, v in m.items() if k != "kind"}))

    filter_band = None
    if raw.get("filter_band") is not None:
        lo, hi = raw["filter_band"]
        filter_band = Band(lo, hi)

    scope = raw.get("normalize_scope", "train")
    if scope not in ("train", "per_dataset"):
        raise ValidationError(f"normalize_scope must be 'train' or 'per_dataset', got {scope!r}")

    return ExperimentConfig(
        source=raw["source"],
        target=raw["target"],
        seed=int(seed),
        stages=stages,
        models=models,
        space=Space(raw.get("space", "feature")),
        lam=float(raw.get("lambda", 1e-3)),
        n_folds=int(raw.get("n_folds", 15)),
        reject=bool(raw.get("reject", True)),
        z_thresh=float(raw.get("z_thresh", 3.0)),
        filter_band=filter_band,
        age_regression=bool(raw.get("age_regression", False)),
        normalize_scope=scope,
        feature_config=_feature_config_from_dict(raw.get("features", {})),
        dba_max_iters=int(raw.get("dba_max_iters", 10)),
        dba_tol=float(raw.get("dba_tol", 1e-6)),
        dba_window=raw.get("dba_window"),
    )


# ---------------------------------------------------------------------------
# pipeline pieces


@dataclass
class EpochTable:
    """Feature rows for one dataset plus per-row metadata."""

    values: np.ndarray
    names: list[str]
    labels: np.ndarray
    subject_ids: np.ndarray
    ages: np.ndarray
    dataset_name: str

    def matrix(self) -> FeatureMatrix:
        return FeatureMatrix(self.values, list(self.names))

    def with_matrix(self, fm: FeatureMatrix) -> "EpochTable":
        return EpochTable(
            fm.values, list(fm.names), self.labels, self.subject_ids, self.ages,
            self.dataset_name,
        )

    def subject_mask(self, subject_ids) -> np.ndarray:
        wanted = set(subject_ids)
        return np.array([sid in wanted for sid in self.subject_ids])


def preprocess_dataset(
    dataset: Dataset,
    config: ExperimentConfig,
    channel_average: bool = False,
    resample_to: float | None = None,
) -> Dataset:
    """Rejection, optional DTW channel averaging / resampling, optional bandpass."""
    subjects = []
    for subject in dataset.subjects:
        if config.reject:
            subject, _ = reject_epochs(subject, config.z_thresh)
        epochs = subject.epochs
        if channel_average and epochs and epochs[0].n_channels > 1:
            epochs = [
                dba_average_channels(e, config.dba_max_iters, config.dba_tol, config.dba_window)
                for e in epochs
            ]
        if resample_to is not None and epochs and epochs[0].fs != resample_to:
            epochs = [resample(e, resample_to) for e in epochs]
        if config.filter_band is not None:
            epochs = [fft_bandpass(e, config.filter_band, config.feature_config.taper_hz) for e in epochs]
        subjects.append(replace(subject, epochs=epochs))
    return Dataset(dataset.name, subjects)


def features_table(dataset: Dataset, feature_config: FeatureConfig) -> EpochTable:
    """Extract per-epoch features in subject-major order."""
    vectors, labels, subject_ids, ages = [], [], [], []
    for subject in dataset.subjects:
        for epoch in subject.epochs:
            vectors.append(extract_features(epoch, feature_config))
            labels.append(subject.group.value)
            subject_ids.append(subject.subject_id)
            ages.append(subject.age_years)
    if not vectors:
        raise ValidationError(f"dataset {dataset.name!r} has no epochs after preprocessing")
    fm = FeatureMatrix.from_vectors(vectors)
    return EpochTable(
        fm.values, fm.names, np.array(labels), np.array(subject_ids),
        np.array(ages, dtype=np.float64), dataset.name,
    )


def _normalize_tables(
    tables: list[EpochTable], train_masks: list[np.ndarray], config: ExperimentConfig
) -> list[EpochTable]:
    """Logit transforms, optional age regression, then z-scoring.

    Statistics come from training rows only ("train" scope) or from each
    dataset's own rows ("per_dataset" scope); test labels are never used.
    """
    tables = [t.with_matrix(transform_matrix(t.matrix())[0]) for t in tables]

    if config.age_regression:
        train_values = np.vstack([t.values[m] for t, m in zip(tables, train_masks)])
        train_labels = np.concatenate([t.labels[m] for t, m in zip(tables, train_masks)])
        train_ages = np.concatenate([t.ages[m] for t, m in zip(tables, train_masks)])
        control = train_labels == Group.CONTROL.value
        model = fit_age_regression(
            FeatureMatrix(train_values[control], list(tables[0].names)),
            train_ages[control],
        )
        tables = [
            t.with_matrix(apply_age_regression(t.matrix(), t.ages, model)) for t in tables
        ]

    if config.normalize_scope == "per_dataset":
        out = []
        for t in tables:
            scaler = standardize_fit(t.matrix())
            out.append(t.with_matrix(standardize_apply(t.matrix(), scaler)))
        return out
    train_values = np.vstack([t.values[m] for t, m in zip(tables, train_masks)])
    scaler = standardize_fit(FeatureMatrix(train_values, list(tables[0].names)))
    return [t.with_matrix(standardize_apply(t.matrix(), scaler)) for t in tables]


def _align_table_feature_space(table: EpochTable, lam: float) -> EpochTable:
    """Whiten one dataset's feature rows by its subject-averaged second moment."""
    order = []
    seen = set()
    for sid in table.subject_ids:
        if sid not in seen:
            seen.add(sid)
            order.append(sid)
    subject_trials = [
        [row for row in table.values[table.subject_ids == sid]] for sid in order
    ]
    ref = reference_from_subject_trials(subject_trials, Space.FEATURE, lam, table.dataset_name)
    transform = alignment_transform(ref)
    return EpochTable(
        align_feature_rows(table.values, transform), list(table.names), table.labels,
        table.subject_ids, table.ages, table.dataset_name,
    )


def _fit_model(spec: ModelSpec, x, labels, seed: int, run_id: str):
    if spec.kind == "knn":
        return knn_fit(x, labels, spec.params["k"], run_id=run_id)
    if spec.kind == "cart":
        return cart_fit(
            x, labels,
            max_depth=spec.params.get("max_depth"),
            min_leaf=spec.params.get("min_leaf", 1),
        )
    return forest_fit(
        x, labels,
        n_trees=spec.params.get("n_trees", 100),
        mtry=spec.params.get("mtry"),
        max_depth=spec.params.get("max_depth"),
        min_leaf=spec.params.get("min_leaf", 1),
        bootstrap=spec.params.get("bootstrap", True),
        seed=spec.params.get("seed", seed),
    )


def _fold_metrics(model, table: EpochTable, fold) -> dict:
    mask = table.subject_mask(fold.test_subject_ids)
    if not mask.any():
        raise ValidationError(
            f"fold test subjects {fold.test_subject_ids} have no epochs in this stage"
        )
    metrics = evaluate(model, table.values[mask], table.labels[mask], table.subject_ids[mask])
    return {
        "test_subject_ids": list(fold.test_subject_ids),
        "epoch_accuracy": metrics.epoch_accuracy,
        "subject_accuracy": metrics.subject_accuracy,
        "confusion": metrics.confusion.tolist(),
        "classes": list(metrics.classes),
    }


def _aggregate_cell(stage, model_id, case, per_fold) -> dict:
    confusion = np.sum([np.asarray(f["confusion"]) for f in per_fold], axis=0)
    return {
        "stage": stage.value,
        "model": model_id,
        "case": case,
        "epoch_accuracy": float(np.mean([f["epoch_accuracy"] for f in per_fold])),
        "subject_accuracy": float(np.mean([f["subject_accuracy"] for f in per_fold])),
        "confusion": confusion.tolist(),
        "classes": list(per_fold[0]["classes"]),
        "per_fold": per_fold,
    }


def _deltas(cells: list[dict], pairs: list[tuple[str, str, str]]) -> list[dict]:
    index = {(c["stage"], c["model"], c["case"]): c for c in cells}
    out = []
    stages = sorted({c["stage"] for c in cells})
    model_ids = []
    for c in cells:
        if c["model"] not in model_ids:
            model_ids.append(c["model"])
    for comparison, plus, minus in pairs:
        for stage in stages:
            for model_id in model_ids:
                a = index[(stage, model_id, plus)]
                b = index[(stage, model_id, minus)]
                out.append({
                    "stage": stage,
                    "model": model_id,
                    "comparison": comparison,
                    "epoch_accuracy_delta": a["epoch_accuracy"] - b["epoch_accuracy"],
                    "subject_accuracy_delta": a["subject_accuracy"] - b["subject_accuracy"],
                })
    return out


# ---------------------------------------------------------------------------
# experiments


def run_intra(raw_config: dict, seed_override: int | None = None) -> dict:
    """Source-to-target transfer with and without alignment, identical folds.

    The model trains on all source subjects; each fold evaluates one held-out
    (TBI, Control) target pair. Normalization fits on training (source) rows;
    the target reference matrix uses all target rows without labels.
    """
    config = parse_experiment_config(raw_config, seed_override)
    source = resolve_dataset(config.source, config.seed)
    target = resolve_dataset(config.target, config.seed + 1)
    plan = plan_independent_validation(target, config.n_folds, config.seed)

    source_p = preprocess_dataset(source, config)
    target_p = preprocess_dataset(target, config)

    cells = []
    for stage in config.stages:
        source_s = filter_by_stage(source_p, stage)
        target_s = filter_by_stage(target_p, stage)

        stage_tables: dict[str, tuple[EpochTable, EpochTable]] = {}
        base = (
            features_table(source_s, config.feature_config),
            features_table(target_s, config.feature_config),
        )
        stage_tables["unaligned"] = base
        if config.space is Space.RAW:
            src_t = alignment_transform(dataset_reference_matrix(source_s, Space.RAW, config.lam))
            tgt_t = alignment_transform(dataset_reference_matrix(target_s, Space.RAW, config.lam))
            stage_tables["aligned"] = (
                features_table(align_dataset(source_s, src_t), config.feature_config),
                features_table(align_dataset(target_s, tgt_t), config.feature_config),
            )
        else:
            stage_tables["aligned"] = base

        for case in ("unaligned", "aligned"):
            src_tab, tgt_tab = stage_tables[case]
            masks = [np.ones(src_tab.values.shape[0], bool), np.zeros(tgt_tab.values.shape[0], bool)]
            src_n, tgt_n = _normalize_tables([src_tab, tgt_tab], masks, config)
            if case == "aligned" and config.space is Space.FEATURE:
                src_n = _align_table_feature_space(src_n, config.lam)
                tgt_n = _align_table_feature_space(tgt_n, config.lam)
            for spec in config.models:
                run_id = f"intra_{stage.value}_{case}_{spec.model_id}_seed{config.seed}"
                model = _fit_model(spec, src_n.values, src_n.labels, config.seed, run_id)
                per_fold = [_fold_metrics(model, tgt_n, fold) for fold in plan.folds]
                cells.append(_aggregate_cell(stage, spec.model_id, case, per_fold))

    report = {
        "kind": "intra",
        "version": __version__,
        "config": raw_config,
        "seed": config.seed,
        "folds": [
            {"test_subject_ids": f.test_subject_ids, "train_subject_ids": f.train_subject_ids}
            for f in plan.folds
        ],
        "cells": cells,
        "deltas": _deltas(cells, [("aligned_minus_unaligned", "aligned", "unaligned")]),
    }
    return report


INTER_CASES = ("target_only", "pooled", "pooled_aligned")


def run_inter(raw_config: dict, seed_override: int | None = None) -> dict:
    """Three-case cross-species comparison on a channel-averaged target.

    Cases: target_only trains on the fold's target training subjects; pooled
    adds all source epochs; pooled_aligned whitens each dataset to identity
    first. Folds are identical across cases.
    """
    config = parse_experiment_config(raw_config, seed_override)
    source = resolve_dataset(config.source, config.seed)
    target = resolve_dataset(config.target, config.seed + 1)
    plan = plan_independent_validation(target, config.n_folds, config.seed)

    target_fs = None
    for s in target.subjects:
        if s.epochs:
            target_fs = s.epochs[0].fs
            break
    if target_fs is None:
        raise ValidationError("target dataset has no epochs")

    target_p = preprocess_dataset(target, config, channel_average=True)
    source_p = preprocess_dataset(source, config, channel_average=True, resample_to=target_fs)

    cells = []
    for stage in config.stages:
        source_s = filter_by_stage(source_p, stage)
        target_s = filter_by_stage(target_p, stage)

        tables = {}
        base = (
            features_table(source_s, config.feature_config),
            features_table(target_s, config.feature_config),
        )
        tables["target_only"] = base
        tables["pooled"] = base
        if config.space is Space.RAW:
            src_t = alignment_transform(dataset_reference_matrix(source_s, Space.RAW, config.lam))
            tgt_t = alignment_transform(dataset_reference_matrix(target_s, Space.RAW, config.lam))
            tables["pooled_aligned"] = (
                features_table(align_dataset(source_s, src_t), config.feature_config),
                features_table(align_dataset(target_s, tgt_t), config.feature_config),
            )
        else:
            tables["pooled_aligned"] = base

        for case in INTER_CASES:
            src_tab, tgt_tab = tables[case]
            for spec in config.models:
                per_fold = []
                for fold in plan.folds:
                    train_tgt = tgt_tab.subject_mask(fold.train_subject_ids)
                    if case == "target_only":
                        masks = [np.zeros(src_tab.values.shape[0], bool), train_tgt]
                    else:
                        masks = [np.ones(src_tab.values.shape[0], bool), train_tgt]
                    src_n, tgt_n = _normalize_tables([src_tab, tgt_tab], masks, config)
                    if case == "pooled_aligned" and config.space is Space.FEATURE:
                        src_n = _align_table_feature_space(src_n, config.lam)
                        tgt_n = _align_table_feature_space(tgt_n, config.lam)
                    if case == "target_only":
                        train_x = tgt_n.values[train_tgt]
                        train_y = tgt_n.labels[train_tgt]
                    else:
                        train_x = np.vstack([src_n.values, tgt_n.values[train_tgt]])
                        train_y = np.concatenate([src_n.labels, tgt_n.labels[train_tgt]])
                    run_id = f"inter_{stage.value}_{case}_{spec.model_id}_seed{config.seed}"
                    model = _fit_model(spec, train_x, train_y, config.seed, run_id)
                    per_fold.append(_fold_metrics(model, tgt_n, fold))
                cells.append(_aggregate_cell(stage, spec.model_id, case, per_fold))

    report = {
        "kind": "inter",
        "version": __version__,
        "config": raw_config,
        "seed": config.seed,
        "folds": [
            {"test_subject_ids": f.test_subject_ids, "train_subject_ids": f.train_subject_ids}
            for f in plan.folds
        ],
        "cells": cells,
        "deltas": _deltas(
            cells,
            [
                ("aligned_minus_pooled", "pooled_aligned", "pooled"),
                ("aligned_minus_target_only", "pooled_aligned", "target_only"),
            ],
        ),
    }
    return report


def emit_report(report: dict, out_dir) -> dict[str, Path]:
    """Write report.json plus a long-format accuracy.csv into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    csv_path = out / "accuracy.csv"
    with open(csv_path, "w") as fh:
        fh.write("stage,model,case,epoch_acc,subject_acc\n")
        for cell in report["cells"]:
            fh.write(
                f"{cell['stage']},{cell['model']},{cell['case']},"
                f"{cell['epoch_accuracy']},{cell['subject_accuracy']}\n"
            )
    return {"report": report_path, "csv": csv_path}
