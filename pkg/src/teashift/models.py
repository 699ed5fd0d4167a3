"""From-scratch classifiers (kNN, CART, random forest), the leave-two-subjects-out
split planner, and evaluation metrics.

Everything is deterministic: explicit tie-break rules in kNN voting and split
selection, per-tree RNG streams derived from (seed, tree index), and seeded
sampling in the split planner.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from teashift.data import Dataset, Group
from teashift.errors import ValidationError


# ---------------------------------------------------------------------------
# split planning


@dataclass
class Fold:
    test_subject_ids: list[str]  # exactly one TBI and one Control
    train_subject_ids: list[str]


@dataclass
class SplitPlan:
    folds: list[Fold]
    seed: int


def plan_independent_validation(dataset: Dataset, n_folds: int = 15, seed: int = 0) -> SplitPlan:
    """Seeded sample of (TBI, Control) test pairs; the rest of the subjects train.

    Uses the full pair grid when it is smaller than n_folds.
    """
    tbi = [s.subject_id for s in dataset.subjects if s.group is Group.TBI]
    ctl = [s.subject_id for s in dataset.subjects if s.group is Group.CONTROL]
    if len(tbi) < 2 or len(ctl) < 2:
        raise ValidationError(
            f"need >= 2 subjects per class to hold one out and still train "
            f"(got {len(tbi)} TBI, {len(ctl)} Control)"
        )
    all_ids = [s.subject_id for s in dataset.subjects]
    pairs = [(t, c) for t in tbi for c in ctl]
    if len(pairs) > n_folds:
        rng = np.random.default_rng(seed)
        keep = rng.choice(len(pairs), size=n_folds, replace=False)
        pairs = [pairs[i] for i in keep]
    folds = [
        Fold(list(pair), [s for s in all_ids if s not in pair]) for pair in pairs
    ]
    return SplitPlan(folds, seed)


# ---------------------------------------------------------------------------
# kNN


@dataclass
class KnnModel:
    x: np.ndarray
    y: np.ndarray  # int codes into classes
    classes: list[str]
    k: int
    run_id: str | None = None

    def predict(self, queries: np.ndarray) -> np.ndarray:
        return knn_predict(self, queries)

    def to_json(self) -> dict:
        # the training matrix is referenced by run id, not embedded
        return {
            "model": "knn",
            "k": self.k,
            "classes": list(self.classes),
            "n_train": int(self.x.shape[0]),
            "run_id": self.run_id,
        }


def _encode_labels(labels) -> tuple[np.ndarray, list[str]]:
    labels = np.asarray(labels)
    classes = sorted({str(v) for v in labels})
    lookup = {c: i for i, c in enumerate(classes)}
    return np.array([lookup[str(v)] for v in labels], dtype=np.intp), classes


def knn_fit(x, labels, k: int, run_id: str | None = None) -> KnnModel:
    x = np.asarray(x, dtype=np.float64)
    if not 1 <= k <= x.shape[0]:
        raise ValidationError(f"k must be in [1, {x.shape[0]}], got {k}")
    y, classes = _encode_labels(labels)
    return KnnModel(x, y, classes, k, run_id)


def knn_predict(model: KnnModel, queries) -> np.ndarray:
    """Majority vote among the k nearest training points (Euclidean distance).

    Vote ties go to the class with the smaller summed neighbor distance, then
    to the lower class in sorted label order. Equal distances rank by training
    index, so predictions are deterministic.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    diff = queries[:, None, :] - model.x[None, :, :]
    dists = np.sqrt(np.einsum("qnd,qnd->qn", diff, diff))
    out = np.empty(queries.shape[0], dtype=np.intp)
    for q in range(queries.shape[0]):
        order = np.argsort(dists[q], kind="stable")[: model.k]
        votes = np.bincount(model.y[order], minlength=len(model.classes))
        best = votes.max()
        candidates = np.flatnonzero(votes == best)
        if candidates.size > 1:
            sums = np.array(
                [dists[q][order][model.y[order] == c].sum() for c in candidates]
            )
            candidates = candidates[np.flatnonzero(sums == sums.min())]
        out[q] = candidates[0]
    return np.array([model.classes[i] for i in out])


# ---------------------------------------------------------------------------
# CART and random forest


@dataclass
class TreeNode:
    counts: np.ndarray  # class counts of training rows at this node
    feature: int = -1  # -1 marks a leaf
    threshold: float = np.nan
    left: int = -1
    right: int = -1

    def to_json(self) -> dict:
        return {
            "counts": self.counts.tolist(),
            "feature": int(self.feature),
            "threshold": None if np.isnan(self.threshold) else float(self.threshold),
            "left": int(self.left),
            "right": int(self.right),
        }


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


def _best_split(x, y, idx, n_classes, feature_ids, min_leaf):
    """Lowest weighted-Gini axis split over the candidate features.

    Tie-break: lowest cost, then lowest feature index, then lowest threshold.
    Returns (cost, feature, threshold) or None when no valid split exists.
    """
    n = idx.shape[0]
    best = None
    for f in feature_ids:
        values = x[idx, f]
        order = np.argsort(values, kind="stable")
        v = values[order]
        labels_sorted = y[idx][order]
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), labels_sorted] = 1.0
        cum = np.cumsum(onehot, axis=0)
        total = cum[-1]

        pos = np.flatnonzero(v[:-1] < v[1:])  # split after sorted position i
        if pos.size == 0:
            continue
        n_left = pos + 1
        n_right = n - n_left
        valid = (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        pos, n_left, n_right = pos[valid], n_left[valid], n_right[valid]
        left_counts = cum[pos]
        right_counts = total - left_counts
        gini_left = 1.0 - np.sum((left_counts / n_left[:, None]) ** 2, axis=1)
        gini_right = 1.0 - np.sum((right_counts / n_right[:, None]) ** 2, axis=1)
        cost = (n_left * gini_left + n_right * gini_right) / n

        i = int(np.argmin(cost))  # first minimum = lowest threshold
        threshold = v[pos[i]] + (v[pos[i] + 1] - v[pos[i]]) / 2
        if threshold >= v[pos[i] + 1]:  # midpoint rounded up to the right value
            threshold = v[pos[i]]
        if best is None or cost[i] < best[0]:
            best = (float(cost[i]), int(f), float(threshold))
    return best


def _grow_tree(x, y, n_classes, max_depth, min_leaf, mtry, rng):
    """Grow one CART; returns (node list, raw importance accumulator)."""
    n_total, n_features = x.shape
    nodes: list[TreeNode] = []
    importance = np.zeros(n_features)
    stack = [(np.arange(n_total), 0, -1, False)]  # idx, depth, parent, is_right
    while stack:
        idx, depth, parent, is_right = stack.pop()
        counts = np.bincount(y[idx], minlength=n_classes).astype(np.float64)
        node_id = len(nodes)
        nodes.append(TreeNode(counts))
        if parent >= 0:
            if is_right:
                nodes[parent].right = node_id
            else:
                nodes[parent].left = node_id

        node_gini = _gini(counts)
        if node_gini == 0.0 or idx.shape[0] < 2 * min_leaf:
            continue
        if max_depth is not None and depth >= max_depth:
            continue

        if mtry >= n_features:
            feature_ids = range(n_features)
        else:
            feature_ids = np.sort(rng.choice(n_features, size=mtry, replace=False))
        split = _best_split(x, y, idx, n_classes, feature_ids, min_leaf)
        if split is None or split[0] >= node_gini:
            continue
        cost, feature, threshold = split
        nodes[node_id].feature = feature
        nodes[node_id].threshold = threshold
        importance[feature] += (idx.shape[0] / n_total) * (node_gini - cost)

        mask = x[idx, feature] <= threshold
        # push right first so the left child is materialized first (stable ids)
        stack.append((idx[~mask], depth + 1, node_id, True))
        stack.append((idx[mask], depth + 1, node_id, False))
    return nodes, importance


def _tree_predict_codes(nodes: list[TreeNode], queries: np.ndarray) -> np.ndarray:
    out = np.empty(queries.shape[0], dtype=np.intp)
    for i, row in enumerate(queries):
        node = nodes[0]
        while node.feature >= 0:
            node = nodes[node.left] if row[node.feature] <= node.threshold else nodes[node.right]
        out[i] = int(np.argmax(node.counts))
    return out


@dataclass
class CartModel:
    nodes: list[TreeNode]
    classes: list[str]
    importance_: np.ndarray  # normalized Gini decrease, sums to 1 if any split

    def predict(self, queries) -> np.ndarray:
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        codes = _tree_predict_codes(self.nodes, queries)
        return np.array([self.classes[c] for c in codes])

    def to_json(self) -> dict:
        return {
            "model": "cart",
            "classes": list(self.classes),
            "nodes": [n.to_json() for n in self.nodes],
            "importance": self.importance_.tolist(),
        }


def _normalize_importance(importance: np.ndarray) -> np.ndarray:
    total = importance.sum()
    return importance / total if total > 0 else importance


def cart_fit(x, labels, max_depth: int | None = None, min_leaf: int = 1) -> CartModel:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValidationError("empty training set")
    y, classes = _encode_labels(labels)
    nodes, importance = _grow_tree(
        x, y, len(classes), max_depth, min_leaf, mtry=x.shape[1], rng=None
    )
    return CartModel(nodes, classes, _normalize_importance(importance))


@dataclass
class ForestModel:
    trees: list[list[TreeNode]]
    classes: list[str]
    importance_: np.ndarray
    seed: int
    params: dict = field(default_factory=dict)

    def predict(self, queries) -> np.ndarray:
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        votes = np.zeros((queries.shape[0], len(self.classes)))
        for nodes in self.trees:
            codes = _tree_predict_codes(nodes, queries)
            votes[np.arange(queries.shape[0]), codes] += 1.0
        return np.array([self.classes[int(np.argmax(v))] for v in votes])

    def to_json(self) -> dict:
        return {
            "model": "forest",
            "classes": list(self.classes),
            "seed": self.seed,
            "params": dict(self.params),
            "trees": [[n.to_json() for n in nodes] for nodes in self.trees],
            "importance": self.importance_.tolist(),
        }


def forest_fit(
    x,
    labels,
    n_trees: int = 100,
    mtry: int | None = None,
    max_depth: int | None = None,
    min_leaf: int = 1,
    bootstrap: bool = True,
    seed: int = 0,
) -> ForestModel:
    """Bagged CARTs with per-split feature subsampling.

    mtry defaults to round(sqrt(n_features)). Each tree draws from its own
    generator seeded by (seed, tree index), so results do not depend on
    evaluation order.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValidationError("empty training set")
    y, classes = _encode_labels(labels)
    n, p = x.shape
    mtry_eff = int(round(np.sqrt(p))) if mtry is None else min(mtry, p)

    trees = []
    importance = np.zeros(p)
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        nodes, imp = _grow_tree(x[rows], y[rows], len(classes), max_depth, min_leaf, mtry_eff, rng)
        trees.append(nodes)
        importance += _normalize_importance(imp)
    return ForestModel(
        trees,
        classes,
        _normalize_importance(importance),
        seed,
        {
            "n_trees": n_trees,
            "mtry": mtry_eff,
            "max_depth": max_depth,
            "min_leaf": min_leaf,
            "bootstrap": bootstrap,
        },
    )


# ---------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    epoch_accuracy: float
    subject_accuracy: float
    confusion: np.ndarray  # rows true class, cols predicted, in `classes` order
    classes: list[str]

    def to_json(self) -> dict:
        return {
            "epoch_accuracy": self.epoch_accuracy,
            "subject_accuracy": self.subject_accuracy,
            "confusion": self.confusion.tolist(),
            "classes": list(self.classes),
        }


def evaluate(model, x, labels, subject_ids) -> Metrics:
    """Epoch accuracy, per-subject majority-vote accuracy, and confusion counts.

    A tied subject vote counts as wrong.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValidationError("empty test set")
    labels = np.asarray([str(v) for v in labels])
    subject_ids = np.asarray([str(v) for v in subject_ids])
    predictions = model.predict(x)

    classes = list(model.classes)
    lookup = {c: i for i, c in enumerate(classes)}
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for truth, pred in zip(labels, predictions):
        confusion[lookup[truth], lookup[pred]] += 1

    epoch_accuracy = float(np.mean(predictions == labels))

    correct_subjects = 0
    unique_subjects = sorted(set(subject_ids))
    for sid in unique_subjects:
        mask = subject_ids == sid
        truth = labels[mask][0]
        votes = {}
        for pred in predictions[mask]:
            votes[pred] = votes.get(pred, 0) + 1
        top = max(votes.values())
        winners = [c for c, v in votes.items() if v == top]
        if len(winners) == 1 and winners[0] == truth:
            correct_subjects += 1
    return Metrics(
        epoch_accuracy,
        correct_subjects / len(unique_subjects),
        confusion,
        classes,
    )
