"""Tabular regression data: CSV loading, train/val/test splits, standardization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

INTERCEPT_NAME = "intercept"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    feature_names: tuple[str, ...]
    has_intercept_column: bool = False
    target_name: str = "y"

    def __post_init__(self):
        X = np.array(self.features, dtype=float, copy=True)
        y = np.array(self.targets, dtype=float, copy=True).reshape(-1)
        if X.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise DatasetError(f"{X.shape[0]} feature rows but {y.shape[0]} targets")
        if X.shape[1] < 1:
            raise DatasetError("need at least one feature column")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DatasetError("features and targets must be finite")
        names = tuple(self.feature_names)
        if len(names) != X.shape[1]:
            raise DatasetError(f"{len(names)} feature names for {X.shape[1]} columns")
        if self.has_intercept_column:
            if INTERCEPT_NAME in names:
                ok = bool(np.all(X[:, names.index(INTERCEPT_NAME)] == 1.0))
            else:
                ok = int(np.sum(np.all(X == 1.0, axis=0))) == 1
            if not ok:
                raise DatasetError("intercept flag set but no unique all-ones column")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def intercept_index(self) -> int | None:
        if not self.has_intercept_column:
            return None
        if INTERCEPT_NAME in self.feature_names:
            return self.feature_names.index(INTERCEPT_NAME)
        return int(np.flatnonzero(np.all(self.features == 1.0, axis=0))[0])

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        if rows.dtype != bool:
            rows = rows.astype(np.intp)
        return Dataset(self.features[rows], self.targets[rows], self.feature_names,
                       self.has_intercept_column, self.target_name)


def from_arrays(X, y, feature_names: Sequence[str] | None = None, add_intercept: bool = False,
                target_name: str = "y") -> Dataset:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
    if add_intercept:
        X = np.column_stack([X, np.ones(X.shape[0])])
        names.append(INTERCEPT_NAME)
    # A column already named as the intercept counts as one.
    return Dataset(X, np.asarray(y, dtype=float), tuple(names), INTERCEPT_NAME in names, target_name)


def load_csv(path, target_column: str, add_intercept: bool = True) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if target_column not in header:
            raise DatasetError(f"{path}: target column {target_column!r} not in header")
        rows = []
        for lineno, record in enumerate(reader, start=2):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise DatasetError(f"{path}: row {lineno} has {len(record)} cells, expected {len(header)}")
            values = []
            for col, cell in zip(header, record):
                try:
                    v = float(cell)
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    raise DatasetError(f"{path}: row {lineno}, column {col!r}: cannot parse {cell!r} as a finite number")
                values.append(v)
            rows.append(values)
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    table = np.array(rows)
    t = header.index(target_column)
    y = table[:, t]
    if np.all(y == y[0]):
        raise DatasetError(f"{path}: target column {target_column!r} is constant")
    keep = [j for j in range(len(header)) if j != t]
    return from_arrays(table[:, keep], y, [header[j] for j in keep], add_intercept, target_column)


def write_csv(data: Dataset, path) -> None:
    """Inverse of load_csv(add_intercept=True): the intercept column is not written."""
    cols = [j for j, name in enumerate(data.feature_names)
            if not (data.has_intercept_column and j == data.intercept_index)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([data.feature_names[j] for j in cols] + [data.target_name])
        for x, y in zip(data.features, data.targets):
            w.writerow([repr(float(x[j])) for j in cols] + [repr(float(y))])


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.5
    val_frac: float = 0.3
    test_frac: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if not all(0.0 < f < 1.0 for f in fracs):
            raise DatasetError(f"split fractions must lie in (0, 1), got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-12:
            raise DatasetError(f"split fractions must sum to 1, got {sum(fracs)!r}")


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n_val = math.floor(spec.val_frac * n)
    n_test = math.floor(spec.test_frac * n)
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise DatasetError(f"split of n={n} by {spec} leaves an empty part")
    perm = np.random.default_rng(spec.seed).permutation(n)
    return (np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
            np.sort(perm[n_train + n_val:]))


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    tr, va, te = split_indices(data.n, spec)
    return data.subset(tr), data.subset(va), data.subset(te)


@dataclass(frozen=True)
class Standardizer:
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: float
    target_std: float
    # Columns left untouched (the intercept).
    exempt: tuple[int, ...] = field(default=())

    def apply(self, data: Dataset) -> Dataset:
        return standardize_apply(self, data)

    def invert(self, data: Dataset) -> Dataset:
        X = data.features * self.feature_std + self.feature_mean
        y = data.targets * self.target_std + self.target_mean
        return Dataset(X, y, data.feature_names, data.has_intercept_column, data.target_name)


def standardize_fit(train: Dataset) -> Standardizer:
    if train.n < 2:
        raise DatasetError("need at least two training rows to standardize")
    exempt = () if train.intercept_index is None else (train.intercept_index,)
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0, ddof=1)
    for j in range(train.d):
        if j in exempt:
            mean[j], std[j] = 0.0, 1.0
        elif not std[j] > 0:
            raise DatasetError(f"feature {train.feature_names[j]!r} has zero variance on the training rows")
    t_std = float(train.targets.std(ddof=1))
    if not t_std > 0:
        raise DatasetError("target has zero variance on the training rows")
    return Standardizer(mean, std, float(train.targets.mean()), t_std, exempt)


def standardize_apply(s: Standardizer, data: Dataset) -> Dataset:
    if data.d != s.feature_mean.shape[0]:
        raise DatasetError(f"standardizer fitted on d={s.feature_mean.shape[0]}, data has d={data.d}")
    X = (data.features - s.feature_mean) / s.feature_std
    y = (data.targets - s.target_mean) / s.target_std
    return Dataset(X, y, data.feature_names, data.has_intercept_column, data.target_name)
