"""Accuracy, class recall, misclassification counts and per-round series."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .data import LabeledDataset
from .model import ParameterVector, predict_batch


class UndefinedRecallError(ValueError):
    """The requested class has no examples in the evaluation set."""


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64, copy=True)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got {counts.shape}")
        if (counts < 0).any():
            raise ValueError("confusion counts must be nonnegative")
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def class_count(self) -> int:
        return self.counts.shape[0]


def confusion_from_predictions(true, predicted, class_count: int) -> ConfusionMatrix:
    true = np.asarray(true, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    flat = np.bincount(true * class_count + predicted, minlength=class_count * class_count)
    return ConfusionMatrix(flat.reshape(class_count, class_count))


def confusion(params: ParameterVector, testset: LabeledDataset) -> ConfusionMatrix:
    if testset.n_features != params.arch.n_inputs:
        raise ValueError(
            f"test set has {testset.n_features} features, model expects {params.arch.n_inputs}")
    if testset.class_count != params.arch.n_classes:
        raise ValueError("test set and model disagree on the number of classes")
    return confusion_from_predictions(testset.labels, predict_batch(params, testset.features),
                                      testset.class_count)


def accuracy(cm: ConfusionMatrix) -> float:
    """Percentage of correctly classified examples."""
    if cm.total == 0:
        raise ValueError("accuracy of an empty confusion matrix")
    return 100.0 * np.trace(cm.counts) / cm.total


def class_recall(cm: ConfusionMatrix, c: int) -> float:
    """``100 * TP / (TP + FN)`` for class ``c``.

    Raises:
        UndefinedRecallError: class ``c`` has no true examples.
    """
    row = cm.counts[c]
    support = row.sum()
    if support == 0:
        raise UndefinedRecallError(f"class {c} does not occur in the evaluation set")
    return 100.0 * row[c] / support


def recalls(cm: ConfusionMatrix) -> np.ndarray:
    """Recall of every class; NaN marks classes absent from the evaluation set."""
    support = cm.counts.sum(axis=1)
    out = np.full(cm.class_count, np.nan)
    has = support > 0
    out[has] = 100.0 * np.diag(cm.counts)[has] / support[has]
    return out


def baseline_miscount(cm_np: ConfusionMatrix, i: int, j: int) -> int:
    """How many class-``i`` examples the non-poisoned model labels ``j``."""
    if i == j:
        raise ValueError("misclassification count needs two different classes")
    return int(cm_np.counts[i, j])


@dataclass
class MetricsSeries:
    """Per-round accuracy, per-class recall and malicious participation."""

    accuracy: list[float] = field(default_factory=list)
    recall: list[np.ndarray] = field(default_factory=list)
    malicious_selected: list[int] = field(default_factory=list)

    def append(self, cm: ConfusionMatrix, malicious: int) -> None:
        self.accuracy.append(accuracy(cm))
        self.recall.append(recalls(cm))
        self.malicious_selected.append(int(malicious))

    def __len__(self) -> int:
        return len(self.accuracy)

    def recall_of(self, c: int) -> np.ndarray:
        return np.array([r[c] for r in self.recall])


def recall_loss(baseline: MetricsSeries, attacked: MetricsSeries, source: int,
                window: tuple[int, int] | None = None) -> float:
    """Source recall of the clean run minus that of the attacked run.

    With ``window=None`` the final round is compared; otherwise both series
    are averaged over the inclusive 1-based round range first.
    """
    if len(baseline) != len(attacked) or not len(baseline):
        raise ValueError("recall loss needs two completed runs of equal length")
    return window_recall(baseline, source, window) - window_recall(attacked, source, window)


def window_recall(series: MetricsSeries, c: int, window: tuple[int, int] | None = None) -> float:
    r = series.recall_of(c)
    if window is None:
        return float(r[-1])
    lo, hi = window
    if not 1 <= lo <= hi <= len(r):
        raise ValueError(f"window {window} outside rounds 1..{len(r)}")
    return float(r[lo - 1:hi].mean())


@dataclass(frozen=True)
class ConsecutiveDeltas:
    pairs: list[tuple[int, float]]
    grouped: dict[int, float]
    group_sizes: dict[int, int]


def consecutive_round_deltas(series: MetricsSeries, source: int, start: int = 1) -> ConsecutiveDeltas:
    """Round-to-round changes of malicious count and source recall.

    One pair ``(mal[r] - mal[r-1], recall[r] - recall[r-1])`` per round
    ``r >= max(start, 2)`` (1-based), plus the mean recall change per
    malicious change.
    """
    mal = np.asarray(series.malicious_selected)
    rec = series.recall_of(source)
    first = max(start - 1, 1)
    if len(mal) - first < 1:
        raise ValueError("need at least two rounds from the start round on")
    pairs = [(int(mal[i] - mal[i - 1]), float(rec[i] - rec[i - 1]))
             for i in range(first, len(mal))]
    return ConsecutiveDeltas(pairs, *group_deltas(pairs))


def group_deltas(pairs) -> tuple[dict[int, float], dict[int, int]]:
    buckets: dict[int, list[float]] = defaultdict(list)
    for dm, dr in pairs:
        buckets[dm].append(dr)
    keys = sorted(buckets)
    return ({k: float(np.mean(buckets[k])) for k in keys},
            {k: len(buckets[k]) for k in keys})


def recall_shift_triple(baseline: np.ndarray, attacked: np.ndarray, source: int, target: int):
    """(source change, target change, summed change of all other classes)."""
    delta = np.asarray(attacked, dtype=float) - np.asarray(baseline, dtype=float)
    others = [c for c in range(delta.shape[0]) if c not in (source, target)]
    return float(delta[source]), float(delta[target]), float(delta[others].sum())
