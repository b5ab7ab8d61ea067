"""Regression and exclusion metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

EPS = 1e-12
DEFAULT_TAUS = (0.01, 0.005)


def relative_error(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    return np.abs(y_pred - y_true) / np.maximum(np.abs(y_true), EPS)


def within_ratio(truths, preds, tau: float) -> float:
    truths = np.asarray(truths, dtype=float)
    if truths.size == 0:
        raise ValueError("empty input")
    if truths.shape != np.shape(preds):
        raise ValueError("truths and predictions differ in length")
    return float(np.mean(relative_error(truths, preds) <= tau))


def average_accuracy(truths, preds) -> float:
    return float(np.mean(np.clip(1.0 - relative_error(truths, preds), 0.0, 1.0)))


def mse_r2(truths, preds) -> tuple[float, float]:
    truths = np.asarray(truths, dtype=float)
    preds = np.asarray(preds, dtype=float)
    if truths.size < 2:
        raise ValueError("need at least 2 samples")
    sse = float(np.sum((truths - preds) ** 2))
    sst = float(np.sum((truths - truths.mean()) ** 2))
    if sst == 0:
        raise ValueError("R2 undefined for constant truths")
    return sse / truths.size, 1.0 - sse / sst


def miss_overkill(excluded, truths, preds, accuracy_tau: float) -> dict:
    """Missed: inaccurate but retained.  Overkill: accurate but excluded."""
    excluded = np.asarray(excluded, dtype=bool)
    inaccurate = relative_error(truths, preds) > accuracy_tau
    missed = int(np.sum(inaccurate & ~excluded))
    overkill = int(np.sum(~inaccurate & excluded))
    return {
        "missed_count": missed,
        "missed_rate": missed / max(int(inaccurate.sum()), 1),
        "overkill_count": overkill,
        "overkill_rate": overkill / max(int((~inaccurate).sum()), 1),
    }


@dataclass
class EvaluationReport:
    n: int
    mse: float
    r2: float
    average_accuracy: float
    within_ratio: dict[str, float]
    excluded_rate: float = 0.0
    missed_count: int = 0
    missed_rate: float = 0.0
    overkill_count: int = 0
    overkill_rate: float = 0.0
    dc_error: float | None = None
    mse_normalized: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(truths, preds, taus=DEFAULT_TAUS, excluded=None, accuracy_tau=None,
             dc_error=None, target_span: float | None = None) -> EvaluationReport:
    """Metrics over the given rows; ``target_span`` rescales MSE to min-max units."""
    truths = np.asarray(truths, dtype=float)
    preds = np.asarray(preds, dtype=float)
    mse, r2 = mse_r2(truths, preds)
    excluded = np.zeros(truths.shape, bool) if excluded is None else np.asarray(excluded, bool)
    mo = miss_overkill(excluded, truths, preds, taus[0] if accuracy_tau is None else accuracy_tau)
    return EvaluationReport(
        n=int(truths.size),
        mse=mse,
        r2=r2,
        average_accuracy=average_accuracy(truths, preds),
        within_ratio={repr(float(t)): within_ratio(truths, preds, t) for t in taus},
        excluded_rate=float(excluded.mean()),
        dc_error=dc_error,
        mse_normalized=None if not target_span else mse / target_span**2,
        **mo,
    )
