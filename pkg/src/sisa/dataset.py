"""Training records, synthetic blobs, CSV ingest and erasure probabilities.

A :class:`Dataset` is stored column-wise (numpy arrays) and treated as
immutable; every transformation returns a new instance.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import DataFormatError

__all__ = [
    "DataPoint",
    "Dataset",
    "ScenarioConfig",
    "three_group_scenario",
    "gen_synthetic",
    "load_csv",
    "write_csv",
    "assign_probs",
    "split_train_test",
]


@dataclass(frozen=True)
class DataPoint:
    id: int
    features: np.ndarray
    label: int
    erase_prob: float = 0.0


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered collection of labelled points.

    Parameters
    ----------
    ids : array of int64, shape (N,)
    features : array of float64, shape (N, feature_dim)
    labels : array of int64, shape (N,)
    erase_probs : array of float64, shape (N,)
        Per-point probability that the owner asks for erasure.
    num_classes : int
    """

    ids: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    erase_probs: np.ndarray
    num_classes: int
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        X = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        p = np.ascontiguousarray(self.erase_probs, dtype=np.float64)
        if ids.ndim != 1 or ids.size == 0:
            raise ValueError("empty dataset")
        if X.ndim != 2 or X.shape[0] != ids.size or X.shape[1] < 1:
            raise ValueError(f"features must have shape (N, d>=1), got {X.shape}")
        if y.shape != ids.shape or p.shape != ids.shape:
            raise ValueError("ids, labels and erase_probs must have equal length")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError("label out of range [0, num_classes)")
        if not (np.all(p >= 0.0) and np.all(p <= 1.0)):
            raise ValueError("erase_prob must lie in [0, 1]")
        index = {int(i): k for k, i in enumerate(ids)}
        if len(index) != ids.size:
            raise ValueError("duplicate point ids")
        for arr in (ids, X, y, p):
            arr.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "erase_probs", p)
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return int(self.ids.size)

    @property
    def size(self) -> int:
        return len(self)

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def points(self) -> Iterator[DataPoint]:
        for k in range(len(self)):
            yield self.point(k)

    def point(self, k: int) -> DataPoint:
        return DataPoint(int(self.ids[k]), self.features[k], int(self.labels[k]),
                         float(self.erase_probs[k]))

    def rows(self, point_ids: Sequence[int]) -> np.ndarray:
        """Row positions of ``point_ids``, in the given order."""
        index = self._index
        try:
            return np.fromiter((index[int(i)] for i in point_ids), dtype=np.int64,
                               count=len(point_ids))
        except KeyError as exc:
            raise KeyError(f"point id {exc.args[0]} not in dataset") from None

    def __contains__(self, point_id) -> bool:
        return int(point_id) in self._index

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.ids[rows], self.features[rows], self.labels[rows],
                       self.erase_probs[rows], self.num_classes)

    def without(self, point_ids) -> "Dataset":
        """Copy of the dataset with ``point_ids`` dropped."""
        drop = set(int(i) for i in point_ids)
        keep = [k for k, i in enumerate(self.ids) if int(i) not in drop]
        return self.subset(keep)

    def with_probs(self, probs) -> "Dataset":
        return Dataset(self.ids, self.features, self.labels, probs, self.num_classes)


@dataclass(frozen=True)
class ScenarioConfig:
    """Population groups, each a ``(fraction_of_dataset, erase_prob)`` pair."""

    groups: tuple
    seed: int = 0

    def __post_init__(self):
        groups = tuple((float(f), float(p)) for f, p in self.groups)
        if not groups:
            raise ValueError("scenario needs at least one group")
        if abs(sum(f for f, _ in groups) - 1.0) > 1e-9:
            raise ValueError("group fractions must sum to 1")
        for f, p in groups:
            if f < 0 or not 0.0 <= p <= 1.0:
                raise ValueError(f"invalid group ({f}, {p})")
        object.__setattr__(self, "groups", groups)


def three_group_scenario(seed: int = 0, prob_scale: float = 1.0) -> ScenarioConfig:
    """Three populations with different erasure propensities.

    Fractions 0.7717 / 0.1001 / 0.1282 with probabilities 3e-6 / 3e-5 / 6e-6.
    ``prob_scale`` multiplies every probability, which keeps the relative
    propensities while making requests frequent enough on small datasets.
    """
    base = ((0.7717, 3e-6), (0.1001, 3e-5), (0.1282, 6e-6))
    return ScenarioConfig(tuple((f, min(1.0, p * prob_scale)) for f, p in base), seed)


def gen_synthetic(num_points: int, feature_dim: int, num_classes: int, seed: int) -> Dataset:
    """Isotropic Gaussian blobs, one centre per class.

    Centres are uniform on ``[-1, 1]^feature_dim``; points get standard normal
    noise scaled by 0.3. Labels are assigned round-robin in generation order.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if feature_dim < 1:
        raise ValueError("feature_dim must be >= 1")
    if num_points < num_classes:
        raise ValueError("num_points must be >= num_classes")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(-1.0, 1.0, size=(num_classes, feature_dim))
    labels = np.arange(num_points, dtype=np.int64) % num_classes
    noise = rng.standard_normal((num_points, feature_dim))
    X = centers[labels] + 0.3 * noise
    return Dataset(np.arange(num_points), X, labels, np.zeros(num_points), num_classes)


def load_csv(path, num_classes: int | None = None) -> Dataset:
    """Read ``id,label,erase_prob,f_1,...,f_d`` rows (header required).

    ``num_classes`` defaults to ``max(label) + 1`` (at least 2).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: missing header row")
        ids, labels, probs, feats = [], [], [], []
        seen = {}
        width = None
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
                if width < 4:
                    raise DataFormatError(f"{path}: row {rowno}: need id,label,erase_prob and >=1 feature")
            if len(row) != width:
                raise DataFormatError(
                    f"{path}: row {rowno}: expected {width} fields, got {len(row)}")
            try:
                pid = int(row[0])
                label = int(row[1])
                prob = float(row[2])
                f = [float(v) for v in row[3:]]
            except ValueError:
                raise DataFormatError(f"{path}: row {rowno}: non-numeric field") from None
            if pid in seen:
                raise DataFormatError(
                    f"{path}: row {rowno}: duplicate id {pid} (first seen at row {seen[pid]})")
            if not 0.0 <= prob <= 1.0:
                raise DataFormatError(f"{path}: row {rowno}: erase_prob {prob} outside [0, 1]")
            if label < 0:
                raise DataFormatError(f"{path}: row {rowno}: negative label")
            seen[pid] = rowno
            ids.append(pid)
            labels.append(label)
            probs.append(prob)
            feats.append(f)
    if not ids:
        raise DataFormatError(f"{path}: empty dataset")
    if num_classes is None:
        num_classes = max(2, max(labels) + 1)
    elif max(labels) >= num_classes:
        raise DataFormatError(f"{path}: label {max(labels)} >= num_classes {num_classes}")
    return Dataset(np.array(ids), np.array(feats), np.array(labels), np.array(probs), num_classes)


def write_csv(dataset: Dataset, path) -> None:
    # repr() of a Python float round-trips exactly
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "erase_prob"] + [f"f_{j + 1}" for j in range(dataset.feature_dim)])
        for k in range(len(dataset)):
            w.writerow([int(dataset.ids[k]), int(dataset.labels[k]), repr(float(dataset.erase_probs[k]))]
                       + [repr(float(v)) for v in dataset.features[k]])


def assign_probs(dataset: Dataset, scenario: ScenarioConfig) -> Dataset:
    """Set each point's erase_prob from its scenario group.

    Points are shuffled with ``scenario.seed`` and cut into contiguous groups
    whose sizes follow the group fractions (cumulative rounding).
    """
    n = len(dataset)
    order = np.random.default_rng(scenario.seed).permutation(n)
    cum = np.cumsum([f for f, _ in scenario.groups])
    bounds = [0] + [int(round(c * n)) for c in cum[:-1]] + [n]
    probs = np.empty(n)
    for (_, p), lo, hi in zip(scenario.groups, bounds[:-1], bounds[1:]):
        probs[order[lo:hi]] = p
    return dataset.with_probs(probs)


def split_train_test(dataset: Dataset, test_fraction: float, seed: int):
    """Disjoint ``(train, test)`` split; the test side has ``floor(N * test_fraction)`` points."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n = len(dataset)
    n_test = int(math.floor(n * test_fraction + 1e-9))
    if n_test == 0 or n_test == n:
        raise ValueError(f"split of {n} points at {test_fraction} leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    test_rows = np.sort(perm[:n_test])
    train_rows = np.sort(perm[n_test:])
    return dataset.subset(train_rows), dataset.subset(test_rows)
