"""Tabular data ingestion, preprocessing and seeded splitting."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

ROLES = ("raw", "train", "test", "train_t", "train_p")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus target vector.

    ``X`` has shape ``(n_rows, len(columns))``; ``y`` has shape ``(n_rows,)``.
    ``dropped_rows`` records how many rows were discarded at ingestion.
    """

    columns: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    role: str = "raw"
    target_name: str = "target"
    dropped_rows: int = 0
    row_ids: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if len(self.columns) == 1 else X.reshape(0, len(self.columns))
        if X.shape[1] != len(self.columns):
            raise DatasetError(f"rows have {X.shape[1]} entries but {len(self.columns)} columns are named")
        if X.shape[0] != y.shape[0]:
            raise DatasetError(f"{X.shape[0]} rows but {y.shape[0]} targets")
        if self.role not in ROLES:
            raise DatasetError(f"unknown role {self.role!r}")
        ids = np.arange(len(y)) if self.row_ids is None else np.asarray(self.row_ids)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "row_ids", ids)

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def n_features(self) -> int:
        return len(self.columns)

    def take(self, idx, role: str | None = None) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return replace(
            self,
            X=self.X[idx],
            y=self.y[idx],
            row_ids=self.row_ids[idx],
            role=self.role if role is None else role,
        )


def load_csv(path, target_column: str) -> Dataset:
    """Read a headed CSV; the target column is split off, rows with empty cells dropped."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"no such file: {path}")
    frame = pd.read_csv(path, skipinitialspace=True, float_precision="round_trip")
    if target_column not in frame.columns:
        raise DatasetError(f"target column {target_column!r} not in header {list(frame.columns)}")
    try:
        frame = frame.apply(pd.to_numeric, errors="raise")
    except (ValueError, TypeError) as exc:
        raise DatasetError(f"non-numeric cell in {path}: {exc}") from None
    n_before = len(frame)
    frame = frame.dropna(axis=0, how="any")
    if len(frame) == 0:
        raise DatasetError(f"{path} has no usable rows")
    feature_cols = [c for c in frame.columns if c != target_column]
    values = frame[feature_cols].to_numpy(dtype=float)
    if not np.isfinite(values).all() or not np.isfinite(frame[target_column].to_numpy(float)).all():
        raise DatasetError(f"{path} contains non-finite values")
    return Dataset(
        columns=tuple(str(c) for c in feature_cols),
        X=values,
        y=frame[target_column].to_numpy(dtype=float),
        target_name=target_column,
        dropped_rows=n_before - len(frame),
    )


def iqr_bounds(values: np.ndarray, multiplier: float = 1.5) -> tuple[np.ndarray, np.ndarray]:
    """Per-column Tukey fences with linearly interpolated quartiles."""
    q1, q3 = np.percentile(values, [25, 75], axis=0, method="linear")
    spread = q3 - q1
    return q1 - multiplier * spread, q3 + multiplier * spread


def iqr_filter(ds: Dataset, multiplier: float = 1.5) -> tuple[Dataset, int]:
    """Drop every row where any feature or the target falls outside its IQR fences."""
    if len(ds) == 0:
        raise DatasetError("cannot filter an empty dataset")
    if multiplier <= 0:
        raise DatasetError("IQR multiplier must be positive")
    table = np.column_stack([ds.X, ds.y])
    low, high = iqr_bounds(table, multiplier)
    keep = np.all((table >= low) & (table <= high), axis=1)
    return ds.take(np.flatnonzero(keep)), int((~keep).sum())


@dataclass(frozen=True)
class NormalizationParams:
    """Min-max scaling parameters for every feature column and the target."""

    feature_min: np.ndarray
    feature_max: np.ndarray
    target_min: float
    target_max: float

    @property
    def constant(self) -> np.ndarray:
        return self.feature_max == self.feature_min

    @property
    def target_constant(self) -> bool:
        return self.target_max == self.target_min

    def _feature_span(self):
        span = self.feature_max - self.feature_min
        return np.where(span == 0, 1.0, span)

    def _target_span(self) -> float:
        return 1.0 if self.target_constant else self.target_max - self.target_min

    def transform_features(self, X: np.ndarray) -> np.ndarray:
        out = (np.asarray(X, dtype=float) - self.feature_min) / self._feature_span()
        out[..., self.constant] = 0.0
        return out

    def inverse_features(self, Z: np.ndarray) -> np.ndarray:
        out = np.asarray(Z, dtype=float) * self._feature_span() + self.feature_min
        out[..., self.constant] = self.feature_min[self.constant]
        return out

    def transform_target(self, y):
        y = np.asarray(y, dtype=float)
        if self.target_constant:
            return np.zeros_like(y)
        return (y - self.target_min) / self._target_span()

    def inverse_target(self, z):
        z = np.asarray(z, dtype=float)
        return z * self._target_span() + self.target_min

    def transform(self, ds: Dataset) -> Dataset:
        return replace(ds, X=self.transform_features(ds.X), y=self.transform_target(ds.y))

    def to_dict(self) -> dict:
        return {
            "feature_min": self.feature_min.tolist(),
            "feature_max": self.feature_max.tolist(),
            "target_min": self.target_min,
            "target_max": self.target_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationParams":
        return cls(
            np.asarray(d["feature_min"], dtype=float),
            np.asarray(d["feature_max"], dtype=float),
            float(d["target_min"]),
            float(d["target_max"]),
        )


def fit_normalization(ds: Dataset) -> NormalizationParams:
    if len(ds) == 0:
        raise DatasetError("cannot normalize an empty dataset")
    return NormalizationParams(
        ds.X.min(axis=0), ds.X.max(axis=0), float(ds.y.min()), float(ds.y.max())
    )


def normalize(ds: Dataset) -> tuple[Dataset, NormalizationParams]:
    """Min-max scale every column and the target to [0, 1]; constant columns become 0."""
    params = fit_normalization(ds)
    return params.transform(ds), params


def _partition(n: int, first_size: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    return np.sort(order[:first_size]), np.sort(order[first_size:])


def split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Uniform random train/test partition.

    The train side receives ``round(train_fraction * n)`` rows, where exact
    halves round toward the train side.
    """
    if not 0 < train_fraction < 1:
        raise DatasetError("train_fraction must lie strictly between 0 and 1")
    n = len(ds)
    if n < 2:
        raise DatasetError("need at least 2 rows to split")
    n_train = int(np.floor(train_fraction * n + 0.5))
    n_train = min(max(n_train, 1), n - 1)
    a, b = _partition(n, n_train, seed)
    return ds.take(a, "train"), ds.take(b, "test")


def split_tt(train: Dataset, seed: int) -> tuple[Dataset, Dataset]:
    """1:1 split of the training set into Train_t (fits classifiers) and Train_p (scores them)."""
    n = len(train)
    if n < 4:
        raise DatasetError("need at least 4 training rows for the Train_t/Train_p split")
    a, b = _partition(n, (n + 1) // 2, seed)
    return train.take(a, "train_t"), train.take(b, "train_p")
