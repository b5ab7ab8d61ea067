"""Flag predictions that leave their assigned interval's (expanded) range."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

DEFAULT_FACTOR = 1.05


@dataclass(frozen=True)
class ExclusionConfig:
    factors: tuple[float, ...]
    drop_first: bool = False
    drop_last: bool = False

    def __post_init__(self):
        factors = tuple(float(f) for f in self.factors)
        if any(f < 1 for f in factors):
            raise ValueError(f"expansion factors must be >= 1, got {factors}")
        object.__setattr__(self, "factors", factors)

    @classmethod
    def uniform(cls, n_intervals: int, factor: float = DEFAULT_FACTOR,
                drop_first: bool = False, drop_last: bool = False) -> "ExclusionConfig":
        return cls((factor,) * n_intervals, drop_first, drop_last)

    def to_dict(self) -> dict:
        return {"factors": list(self.factors), "drop_first": self.drop_first,
                "drop_last": self.drop_last}

    @classmethod
    def from_dict(cls, d: dict) -> "ExclusionConfig":
        return cls(tuple(d["factors"]), bool(d.get("drop_first")), bool(d.get("drop_last")))


@dataclass(frozen=True)
class ValidRange:
    low: float
    high: float
    empty: bool = False

    def contains(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.empty:
            return np.zeros(v.shape, dtype=bool)
        return (v >= self.low) & (v <= self.high)


def expand_intervals(seg, cfg: ExclusionConfig, train_target_min: float,
                     train_target_max: float) -> list[ValidRange]:
    """Scale each interval's half-width about its midpoint by its factor.

    The outer intervals are closed off at the observed training-target extremes.
    """
    n = seg.n_intervals
    if len(cfg.factors) != n:
        raise ValueError(f"{len(cfg.factors)} factors for {n} intervals")
    edges = [float(train_target_min), *seg.cuts, float(train_target_max)]
    out = []
    for k in range(n):
        if (k == 0 and cfg.drop_first) or (k == n - 1 and cfg.drop_last):
            out.append(ValidRange(np.nan, np.nan, empty=True))
            continue
        lo, hi = edges[k], edges[k + 1]
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        half *= cfg.factors[k]
        out.append(ValidRange(mid - half, mid + half))
    return out


def apply_exclusion(outcomes, ranges: list[ValidRange]):
    flagged = []
    for o in outcomes:
        r = ranges[o.interval]
        flagged.append(replace(o, low=r.low, high=r.high, excluded=not bool(r.contains(o.value))))
    return flagged


def exclusion_summary(outcomes, n_intervals: int | None = None) -> dict:
    total = len(outcomes)
    if total == 0:
        raise ValueError("no outcomes to summarise")
    intervals = np.array([o.interval for o in outcomes], dtype=int)
    excluded = np.array([o.excluded for o in outcomes], dtype=bool)
    n = int(intervals.max()) + 1 if n_intervals is None else n_intervals
    per_total = np.bincount(intervals, minlength=n)
    per_excluded = np.bincount(intervals[excluded], minlength=n)
    n_excl = int(excluded.sum())
    return {
        "total": total,
        "retained": total - n_excl,
        "excluded": n_excl,
        "excluded_rate": n_excl / total,
        "retained_rate": (total - n_excl) / total,
        "per_interval_total": per_total.tolist(),
        "per_interval_retained": (per_total - per_excluded).tolist(),
        "per_interval_excluded": per_excluded.tolist(),
    }
