"""Small labeled datasets: synthetic generators, CSV round-trip, splitting.

Feature matrices stay plain float64 numpy arrays; labels are contiguous class
indices starting at zero. The CSV schema is one header row ``f1,...,fd,label``
followed by one example per line.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .nnet import LabeledExample


class SyntheticKind(str, Enum):
    GAUSSIAN_BLOBS = "gaussian_blobs"
    TWO_MOONS = "two_moons"
    CONCENTRIC_RINGS = "concentric_rings"


@dataclass(frozen=True)
class Dataset:
    examples: tuple[LabeledExample, ...]
    d: int
    num_classes: int
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        if self.d <= 0 or self.num_classes <= 0:
            raise ValueError("dimension and class count must be positive")
        for ex in self.examples:
            if ex.features.shape != (self.d,):
                raise ValueError("example dimension does not match dataset")
            if ex.label >= self.num_classes:
                raise ValueError(f"label {ex.label} out of range for {self.num_classes} classes")

    def __len__(self) -> int:
        return len(self.examples)

    def features_matrix(self) -> np.ndarray:
        return np.stack([ex.features for ex in self.examples])

    def labels_array(self) -> np.ndarray:
        return np.array([ex.label for ex in self.examples], dtype=np.int64)


@dataclass(frozen=True)
class SyntheticSpec:
    kind: SyntheticKind
    n_per_class: int
    num_classes: int = 2
    d: int = 2
    class_separation: float = 1.0
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", SyntheticKind(self.kind))
        if self.n_per_class <= 0:
            raise ValueError("n_per_class must be positive")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.class_separation < 0 or self.noise < 0:
            raise ValueError("class_separation and noise must be non-negative")


def _blob_means(num_classes: int, d: int, separation: float) -> np.ndarray:
    """Class means with all pairwise distances equal to ``separation``."""
    if num_classes == 2:
        if d < 1:
            raise ValueError("need d >= 1 for two classes")
        means = np.zeros((2, d))
        means[0, 0] = -separation / 2.0
        means[1, 0] = separation / 2.0
        return means
    if d < num_classes:
        raise ValueError("need d >= num_classes for more than two classes")
    # Centered scaled identity: ||e_i - e_j|| = sqrt(2), so scale accordingly.
    means = np.zeros((num_classes, d))
    means[:, :num_classes] = np.eye(num_classes) * (separation / np.sqrt(2.0))
    means -= means.mean(axis=0, keepdims=True)
    return means


def from_arrays(X: np.ndarray, y: np.ndarray, num_classes: int | None = None,
                name: str = "") -> Dataset:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if num_classes is None:
        num_classes = int(y.max()) + 1 if len(y) else 0
    examples = tuple(LabeledExample(features=x, label=int(c)) for x, c in zip(X, y))
    return Dataset(examples=examples, d=X.shape[1], num_classes=num_classes, name=name)


def generate(spec: SyntheticSpec) -> Dataset:
    """Sample a synthetic dataset. Deterministic given the spec's seed."""
    rng = np.random.default_rng(spec.seed)
    n, c = spec.n_per_class, spec.num_classes
    if spec.kind is SyntheticKind.GAUSSIAN_BLOBS:
        means = _blob_means(c, spec.d, spec.class_separation)
        X = np.concatenate([
            means[k] + spec.noise * rng.standard_normal((n, spec.d))
            for k in range(c)
        ])
        y = np.repeat(np.arange(c), n)
    elif spec.kind is SyntheticKind.TWO_MOONS:
        if c != 2 or spec.d != 2:
            raise ValueError("two_moons is a 2-class, 2-d family")
        t0 = rng.uniform(0.0, np.pi, n)
        t1 = rng.uniform(0.0, np.pi, n)
        upper = np.column_stack([np.cos(t0), np.sin(t0)])
        lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
        X = spec.class_separation * np.concatenate([upper, lower])
        X += spec.noise * rng.standard_normal(X.shape)
        y = np.repeat(np.arange(2), n)
    elif spec.kind is SyntheticKind.CONCENTRIC_RINGS:
        if spec.d != 2:
            raise ValueError("concentric_rings is a 2-d family")
        parts = []
        for k in range(c):
            r = (k + 1) * spec.class_separation
            theta = rng.uniform(0.0, 2.0 * np.pi, n)
            parts.append(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
        X = np.concatenate(parts) + spec.noise * rng.standard_normal((n * c, 2))
        y = np.repeat(np.arange(c), n)
    else:  # pragma: no cover - exhaustive enum
        raise ValueError(f"unknown kind {spec.kind}")
    return from_arrays(X, y, num_classes=c, name=spec.kind.value)


def save_csv(dataset: Dataset, path) -> None:
    """Write ``f1,...,fd,label`` rows with full-precision floats."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{k + 1}" for k in range(dataset.d)] + ["label"])
        for ex in dataset.examples:
            writer.writerow([repr(float(v)) for v in ex.features] + [str(ex.label)])


def load_csv(path) -> Dataset:
    """Parse a dataset CSV; malformed rows raise with their 1-based line number.

    The class count is inferred as max(label) + 1. Class indices with no
    examples produce a warning, not an error.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file, expected a header row") from None
        if len(header) < 2 or header[-1] != "label":
            raise ValueError(f"{path}: header must be f1,...,fd,label")
        d = len(header) - 1
        expected = [f"f{k + 1}" for k in range(d)]
        if header[:-1] != expected:
            raise ValueError(f"{path}: header must be f1,...,fd,label")
        feats, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ValueError(f"{path}: line {line_no}: expected {d + 1} fields, got {len(row)}")
            try:
                feats.append([float(v) for v in row[:-1]])
                label = int(row[-1])
            except ValueError:
                raise ValueError(f"{path}: line {line_no}: could not parse row") from None
            if label < 0:
                raise ValueError(f"{path}: line {line_no}: negative label")
            labels.append(label)
    if not feats:
        raise ValueError(f"{path}: no data rows")
    y = np.array(labels, dtype=np.int64)
    num_classes = int(y.max()) + 1
    counts = np.bincount(y, minlength=num_classes)
    empty = np.nonzero(counts == 0)[0]
    if len(empty):
        warnings.warn(
            f"{path}: no examples for class indices {empty.tolist()}", stacklevel=2
        )
    return from_arrays(np.array(feats), y, num_classes=num_classes, name=str(path))


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then cut into train and test parts."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must be strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    k = int(round(len(dataset) * train_fraction))
    train = tuple(dataset.examples[i] for i in order[:k])
    test = tuple(dataset.examples[i] for i in order[k:])
    make = lambda exs, tag: Dataset(
        examples=exs, d=dataset.d, num_classes=dataset.num_classes,
        name=f"{dataset.name}/{tag}" if dataset.name else tag,
    )
    return make(train, "train"), make(test, "test")
