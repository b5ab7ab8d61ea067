"""One regressor per interval, trained on the interval plus its nearest neighbours."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifiers import ClassifierModel
from .dataset import Dataset, NormalizationParams
from .exclusion import ExclusionConfig, ValidRange, expand_intervals
from .segmentation import SegmentationList


class IntervalModelError(ValueError):
    pass


@dataclass(frozen=True)
class RegressorModel:
    coefficients: np.ndarray
    intercept: float
    kind: str = "ordinary_least_squares"

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X @ self.coefficients + self.intercept

    def to_dict(self) -> dict:
        return {"kind": self.kind, "coefficients": self.coefficients.tolist(),
                "intercept": self.intercept}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressorModel":
        return cls(np.asarray(d["coefficients"], dtype=float), float(d["intercept"]), d["kind"])


def fit_ols(X, y) -> RegressorModel:
    """Least squares with intercept; rank-deficient designs get the minimum-norm slope."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if len(y) < 2:
        raise IntervalModelError("need at least 2 rows to fit a regressor")
    if X.shape[1] < 1:
        raise IntervalModelError("need at least one feature")
    x_mean, y_mean = X.mean(axis=0), y.mean()
    coef, *_ = np.linalg.lstsq(X - x_mean, y - y_mean, rcond=None)
    return RegressorModel(coef, float(y_mean - x_mean @ coef))


def fit_regressor(subset: Dataset) -> RegressorModel:
    return fit_ols(subset.X, subset.y)


REGRESSORS = {"ordinary_least_squares": fit_ols}


def redundant_indices(targets, labels, interval: int, seg: SegmentationList,
                      divisor: float = 4.0, min_rows: int = 0) -> np.ndarray:
    """Row indices for an interval's training subset.

    All rows labelled ``interval``, plus at most ``floor(K / divisor)`` rows from
    the adjacent intervals (K = own count), picked by smallest target distance
    to the shared boundary, both sides pooled.  ``min_rows`` raises the cap
    when the interval alone is too small to fit.
    """
    targets = np.asarray(targets, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if not 0 <= interval < seg.n_intervals:
        raise IntervalModelError(f"interval {interval} out of range")
    own = np.flatnonzero(labels == interval)
    if len(own) == 0:
        raise IntervalModelError(f"interval {interval} has no training rows")
    cap = max(int(np.floor(len(own) / divisor)), min_rows - len(own))
    lo, hi = seg.bounds(interval)
    cand = []
    dist = []
    if interval > 0:
        rows = np.flatnonzero(labels == interval - 1)
        cand.append(rows)
        dist.append(lo - targets[rows])
    if interval < seg.n_intervals - 1:
        rows = np.flatnonzero(labels == interval + 1)
        cand.append(rows)
        dist.append(targets[rows] - hi)
    if cap == 0 or not cand:
        return own
    cand = np.concatenate(cand)
    dist = np.concatenate(dist)
    order = np.lexsort((cand, dist))[:cap]
    return np.concatenate([own, np.sort(cand[order])])


def assemble_redundant(train: Dataset, labels, interval: int, seg: SegmentationList,
                       divisor: float = 4.0, min_rows: int = 0) -> Dataset:
    return train.take(redundant_indices(train.y, labels, interval, seg, divisor, min_rows))


@dataclass(frozen=True)
class PredictionOutcome:
    row_id: int
    interval: int
    value: float
    low: float
    high: float
    excluded: bool = False


@dataclass
class IntervalEnsemble:
    """Routing classifier, segmentation (normalised target units) and per-interval regressors."""

    classifier: ClassifierModel
    segmentation: SegmentationList
    regressors: list[RegressorModel]
    normalization: NormalizationParams
    exclusion: ExclusionConfig
    target_range: tuple[float, float]  # raw training-target min/max
    regressor_kind: str = "ordinary_least_squares"
    interval_counts: list[int] | None = None

    @property
    def n_intervals(self) -> int:
        return self.segmentation.n_intervals

    def raw_segmentation(self) -> SegmentationList:
        return SegmentationList(tuple(self.normalization.inverse_target(np.asarray(self.segmentation.cuts))))

    def valid_ranges(self) -> list[ValidRange]:
        return expand_intervals(self.raw_segmentation(), self.exclusion, *self.target_range)

    def to_dict(self) -> dict:
        return {
            "classifier": self.classifier.to_dict(),
            "segmentation": list(self.segmentation.cuts),
            "regressors": [r.to_dict() for r in self.regressors],
            "normalization": self.normalization.to_dict(),
            "exclusion": self.exclusion.to_dict(),
            "target_range": list(self.target_range),
            "regressor_kind": self.regressor_kind,
            "interval_counts": self.interval_counts,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IntervalEnsemble":
        return cls(
            ClassifierModel.from_dict(d["classifier"]),
            SegmentationList(tuple(d["segmentation"])),
            [RegressorModel.from_dict(r) for r in d["regressors"]],
            NormalizationParams.from_dict(d["normalization"]),
            ExclusionConfig.from_dict(d["exclusion"]),
            tuple(float(v) for v in d["target_range"]),
            d.get("regressor_kind", "ordinary_least_squares"),
            d.get("interval_counts"),
        )


MIN_FIT_ROWS = 2  # a sparse edge interval borrows neighbours up to this size


def build_ensemble(train: Dataset, dc_result, normalization: NormalizationParams,
                   exclusion: ExclusionConfig | None = None, divisor: float = 4.0,
                   regressor_kind: str = "ordinary_least_squares",
                   raw_target_range: tuple[float, float] | None = None) -> IntervalEnsemble:
    """Fit one regressor per interval of the optimal segmentation.

    ``train`` is in normalised units; labels come from its true targets.
    """
    seg = dc_result.segmentation
    labels = seg.labels(train.y)
    fit = REGRESSORS[regressor_kind]
    regressors = []
    for k in range(seg.n_intervals):
        idx = redundant_indices(train.y, labels, k, seg, divisor, MIN_FIT_ROWS)
        regressors.append(fit(train.X[idx], train.y[idx]))
    if raw_target_range is None:
        raw = normalization.inverse_target(train.y)
        raw_target_range = (float(raw.min()), float(raw.max()))
    if exclusion is None:
        exclusion = ExclusionConfig.uniform(seg.n_intervals)
    if len(exclusion.factors) != seg.n_intervals:
        raise IntervalModelError(
            f"exclusion config has {len(exclusion.factors)} factors for {seg.n_intervals} intervals"
        )
    return IntervalEnsemble(dc_result.model, seg, regressors, normalization, exclusion,
                            raw_target_range, regressor_kind,
                            np.bincount(labels, minlength=seg.n_intervals).tolist())


def predict(ensemble: IntervalEnsemble, features, row_ids=None) -> list[PredictionOutcome]:
    """Route raw feature rows through the classifier and score each with its interval's regressor."""
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, len(ensemble.normalization.feature_min))
    if X.shape[1] != len(ensemble.normalization.feature_min):
        raise IntervalModelError(
            f"expected {len(ensemble.normalization.feature_min)} features, got {X.shape[1]}"
        )
    Z = ensemble.normalization.transform_features(X)
    routes = ensemble.classifier.predict(Z) if len(Z) else np.zeros(0, dtype=int)
    values = np.empty(len(Z))
    for k, reg in enumerate(ensemble.regressors):
        mask = routes == k
        if mask.any():
            values[mask] = reg.predict(Z[mask])
    values = ensemble.normalization.inverse_target(values)
    ranges = ensemble.valid_ranges()
    ids = np.arange(len(Z)) if row_ids is None else np.asarray(row_ids)
    return [
        PredictionOutcome(int(i), int(k), float(v), ranges[k].low, ranges[k].high)
        for i, k, v in zip(ids, routes, values)
    ]
