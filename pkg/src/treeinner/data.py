"""Dataset container, validation helpers and CSV I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class InvalidInputError(ValueError):
    """Raised when data violates a documented precondition."""


class ShapeError(InvalidInputError):
    """Raised on feature/label count mismatches."""


def check_matrix(X, *, n_features: Optional[int] = None, name: str = "X") -> np.ndarray:
    """Return ``X`` as a C-contiguous finite float64 matrix."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if X.shape[0] < 1 or X.shape[1] < 1:
        raise InvalidInputError(f"{name} must have at least one row and one column, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError(f"{name} contains non-finite values")
    if n_features is not None and X.shape[1] != n_features:
        raise ShapeError(f"{name} has {X.shape[1]} features, expected {n_features}")
    return X


def check_labels(y, n_samples: int, *, binary: bool = False) -> np.ndarray:
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    if y.shape[0] != n_samples:
        raise ShapeError(f"got {y.shape[0]} labels for {n_samples} samples")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("labels contain non-finite values")
    if binary and not np.all((y == 0.0) | (y == 1.0)):
        raise InvalidInputError("classification labels must be 0 or 1")
    return y


@dataclass(frozen=True)
class Dataset:
    """Feature matrix with labels and optional feature names.

    ``task`` is ``"regression"`` or ``"classification"``; classification
    labels must be in {0, 1}.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: Optional[Sequence[str]] = None
    task: str = "regression"

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise InvalidInputError(f"unknown task {self.task!r}")
        X = check_matrix(self.features, name="features")
        y = check_labels(self.labels, X.shape[0], binary=self.task == "classification")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        if self.feature_names is not None:
            names = [str(s) for s in self.feature_names]
            if len(names) != X.shape[1]:
                raise ShapeError(f"{len(names)} feature names for {X.shape[1]} features")
            object.__setattr__(self, "feature_names", tuple(names))

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def names(self) -> list[str]:
        if self.feature_names is not None:
            return list(self.feature_names)
        return [f"x{j}" for j in range(self.n_features)]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.features[rows], self.labels[rows], self.feature_names, self.task)


def read_csv(path, label_column: str = "y", task: str = "regression") -> Dataset:
    """Load a header-first CSV; every column except ``label_column`` is a feature."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    header = [h.strip() for h in header]
    if label_column not in header:
        raise InvalidInputError(f"{path}: label column {label_column!r} not in header")
    try:
        table = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: non-numeric or ragged data ({exc})") from None
    if table.ndim != 2 or table.shape[0] == 0:
        raise InvalidInputError(f"{path}: no data rows")
    li = header.index(label_column)
    keep = [j for j in range(len(header)) if j != li]
    return Dataset(table[:, keep], table[:, li], [header[j] for j in keep], task)


def read_table(path) -> tuple[np.ndarray, list[str]]:
    """Load an all-numeric header-first CSV as (matrix, column names)."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = [r for r in reader if r]
    try:
        table = np.array(rows, dtype=np.float64)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: non-numeric or ragged data ({exc})") from None
    return table, header


def write_csv(data: Dataset, path, label_column: str = "y") -> None:
    path = Path(path)
    names = data.names()
    if label_column in names:
        raise InvalidInputError(f"feature name collides with label column {label_column!r}")
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names + [label_column])
        for xi, yi in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
