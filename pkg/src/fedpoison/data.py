"""Datasets, iid partitioning and the label-flipping transform.

The synthetic generator stands in for image datasets: each class is an
isotropic Gaussian cluster around a configurable center, so the difficulty
of the task (and in particular how often one class is confused with another)
is controlled by the center geometry and the cluster spread.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed datasets, CSV files or invalid data parameters."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with integer class labels in ``[0, class_count)``."""

    features: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64, copy=True)
        labels = np.array(self.labels, copy=True)
        if features.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {features.shape}")
        if labels.ndim != 1:
            raise DataError("labels must be 1-D")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise DataError("labels must be integers")
        labels = labels.astype(np.int64)
        if features.shape[0] != labels.shape[0]:
            raise DataError(
                f"{features.shape[0]} feature rows but {labels.shape[0]} labels")
        if int(self.class_count) < 2:
            raise DataError("class_count must be at least 2")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")
        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "class_count", int(self.class_count))

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.features[index], self.labels[index], self.class_count)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)


@dataclass(frozen=True)
class Partition:
    """One participant's private shard."""

    owner: int
    data: LabeledDataset
    poisoned: bool = False

    def __len__(self) -> int:
        return len(self.data)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a Gaussian-cluster classification task.

    ``centers`` has one row per class; every class contributes
    ``examples_per_class`` rows drawn around its center with standard
    deviation ``cluster_stddev`` in every feature.
    """

    centers: np.ndarray
    cluster_stddev: float
    examples_per_class: int
    seed: int = 0
    class_count: int = field(init=False)

    def __post_init__(self):
        centers = np.array(self.centers, dtype=np.float64, copy=True)
        if centers.ndim != 2 or centers.shape[0] < 2 or centers.shape[1] < 1:
            raise DataError(
                f"centers must be a (classes >= 2, features >= 1) matrix, got {centers.shape}")
        if not self.cluster_stddev > 0:
            raise DataError("cluster_stddev must be positive")
        if int(self.examples_per_class) < 1:
            raise DataError("examples_per_class must be >= 1")
        object.__setattr__(self, "centers", _frozen(centers))
        object.__setattr__(self, "class_count", centers.shape[0])


def generate_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """Draw ``examples_per_class`` points per class, class-major row order."""
    rng = np.random.default_rng(spec.seed)
    n_classes, n_features = spec.centers.shape
    per = int(spec.examples_per_class)
    noise = rng.standard_normal((n_classes * per, n_features)) * spec.cluster_stddev
    features = np.repeat(spec.centers, per, axis=0) + noise
    labels = np.repeat(np.arange(n_classes), per)
    return LabeledDataset(features, labels, n_classes)


def paired_centers(class_count: int, n_features: int, separation: float,
                   pair: tuple[int, int] | None = None,
                   pair_distance: float | None = None) -> np.ndarray:
    """Class centers on scaled coordinate axes, optionally with one close pair.

    Every center is ``separation`` along its own axis, so all pairs are
    ``separation * sqrt(2)`` apart. If ``pair=(a, b)`` is given, center ``b``
    is moved onto the segment from ``a`` to ``b`` at distance
    ``pair_distance`` from ``a``; this creates the one frequently-confused
    class pair that a targeted attack exploits.
    """
    if n_features < class_count:
        raise DataError("need n_features >= class_count for axis-aligned centers")
    centers = np.zeros((class_count, n_features))
    centers[np.arange(class_count), np.arange(class_count)] = separation
    if pair is not None:
        a, b = pair
        if a == b or not (0 <= a < class_count and 0 <= b < class_count):
            raise DataError(f"invalid class pair {pair}")
        if pair_distance is None or pair_distance <= 0:
            raise DataError("pair_distance must be positive")
        direction = centers[b] - centers[a]
        centers[b] = centers[a] + pair_distance * direction / np.linalg.norm(direction)
    return centers


def partition_iid(dataset: LabeledDataset, n_parts: int, seed) -> list[Partition]:
    """Shuffle rows with a seeded permutation and cut them into ``n_parts`` shards.

    Shard sizes differ by at most one and the shards are disjoint.
    """
    if n_parts < 1:
        raise DataError("number of participants must be >= 1")
    n = len(dataset)
    if n == 0:
        raise DataError("cannot partition an empty dataset")
    if n_parts > n:
        raise DataError(f"{n_parts} participants but only {n} examples")
    perm = np.random.default_rng(seed).permutation(n)
    return [Partition(owner=i, data=dataset.subset(np.sort(chunk)))
            for i, chunk in enumerate(np.array_split(perm, n_parts))]


def flip_labels(partition: Partition, source: int, target: int) -> Partition:
    """Relabel every ``source`` example as ``target``; features are untouched."""
    data = partition.data
    if source == target:
        raise DataError("source and target class must differ")
    for c in (source, target):
        if not 0 <= c < data.class_count:
            raise DataError(f"class {c} outside [0, {data.class_count})")
    labels = np.where(data.labels == source, target, data.labels)
    return Partition(partition.owner, LabeledDataset(data.features, labels, data.class_count),
                     poisoned=True)


def load_csv(path: str | os.PathLike, class_count: int | None = None) -> LabeledDataset:
    """Read comma-separated rows of features followed by an integer label.

    No header. ``class_count`` defaults to the largest label plus one.
    """
    with open(path, newline="") as fh:
        return parse_csv(fh.read(), class_count, source=str(path))


def parse_csv(text: str, class_count: int | None = None, source: str = "<text>") -> LabeledDataset:
    rows, labels = [], []
    width = None
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) < 2:
            raise DataError(f"{source}:{lineno}: need at least one feature and a label")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DataError(f"{source}:{lineno}: expected {width} columns, got {len(row)}")
        try:
            rows.append([float(cell) for cell in row[:-1]])
        except ValueError as exc:
            raise DataError(f"{source}:{lineno}: bad feature value ({exc})") from None
        label = row[-1].strip()
        try:
            labels.append(int(label))
        except ValueError:
            raise DataError(f"{source}:{lineno}: label {label!r} is not an integer") from None
    if not rows:
        raise DataError(f"{source}: no data rows")
    labels_arr = np.array(labels, dtype=np.int64)
    if labels_arr.min() < 0:
        raise DataError(f"{source}: negative label")
    if class_count is None:
        class_count = max(int(labels_arr.max()) + 1, 2)
    return LabeledDataset(np.array(rows), labels_arr, class_count)


def format_csv(dataset: LabeledDataset) -> str:
    lines = []
    for x, y in zip(dataset.features, dataset.labels):
        lines.append(",".join([*(repr(float(v)) for v in x), str(int(y))]))
    return "\n".join(lines) + "\n"


def export_csv(dataset: LabeledDataset, path: str | os.PathLike) -> None:
    """Write ``dataset`` in the format read by :func:`load_csv`.

    Floats use the shortest round-tripping representation.
    """
    with open(path, "w", newline="") as fh:
        fh.write(format_csv(dataset))


def concat(parts: Sequence[LabeledDataset]) -> LabeledDataset:
    return LabeledDataset(np.vstack([p.features for p in parts]),
                          np.concatenate([p.labels for p in parts]),
                          parts[0].class_count)
