"""Division of the target range into N contiguous intervals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GRID_POINTS = 512
FLUCTUATION_FLOOR = 0.01


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True)
class DensityCurve:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float


@dataclass(frozen=True)
class SegmentationList:
    """Strictly increasing cut points; ``len(cuts) == n_intervals - 1``.

    Interval 0 is ``(-inf, cuts[0])``, interval k is ``[cuts[k-1], cuts[k])``
    and the last interval is ``[cuts[-1], +inf)``.
    """

    cuts: tuple[float, ...]

    def __post_init__(self):
        cuts = tuple(float(c) for c in self.cuts)
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise SegmentationError(f"cut points must be strictly increasing: {cuts}")
        if not all(np.isfinite(cuts)):
            raise SegmentationError("cut points must be finite")
        object.__setattr__(self, "cuts", cuts)

    @property
    def n_intervals(self) -> int:
        return len(self.cuts) + 1

    def labels(self, values) -> np.ndarray:
        return np.searchsorted(np.asarray(self.cuts), np.asarray(values, dtype=float), side="right")

    def bounds(self, k: int) -> tuple[float, float]:
        lo = -np.inf if k == 0 else self.cuts[k - 1]
        hi = np.inf if k == self.n_intervals - 1 else self.cuts[k]
        return lo, hi


def interval_of(value: float, seg: SegmentationList) -> int:
    return int(seg.labels([value])[0])


def silverman_bandwidth(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    return 1.06 * values.std(ddof=1) * len(values) ** (-0.2)


def kde_density(values, bandwidth: float | None = None, n_grid: int = GRID_POINTS) -> DensityCurve:
    """Gaussian kernel density of ``values`` on a grid spanning [min - 3h, max + 3h]."""
    values = np.asarray(values, dtype=float).ravel()
    if len(values) < 2 or np.ptp(values) == 0:
        raise SegmentationError("kernel density needs at least two distinct values")
    h = silverman_bandwidth(values) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise SegmentationError("bandwidth must be positive")
    grid = np.linspace(values.min() - 3 * h, values.max() + 3 * h, n_grid)
    density = np.zeros(n_grid)
    # chunked to bound the (chunk, grid) temporary
    for start in range(0, len(values), 4096):
        u = (grid[None, :] - values[start:start + 4096, None]) / h
        density += np.exp(-0.5 * u * u).sum(axis=0)
    density /= len(values) * h * np.sqrt(2 * np.pi)
    return DensityCurve(grid, density, h)


def fluctuation_measure(curve: DensityCurve, floor: float = FLUCTUATION_FLOOR) -> np.ndarray:
    """Absolute density slope per grid gap, plus ``floor * max(density)``."""
    slope = np.abs(np.diff(curve.density)) / np.diff(curve.grid)
    return slope + floor * curve.density.max()


def density_measure(curve: DensityCurve, floor: float = FLUCTUATION_FLOOR) -> np.ndarray:
    """Alternative strategy: midpoint density per gap (equal-probability cuts)."""
    mid = 0.5 * (curve.density[1:] + curve.density[:-1])
    return mid + floor * curve.density.max()


STRATEGIES = {"fluctuation": fluctuation_measure, "density": density_measure}


def equal_mass_cuts(grid: np.ndarray, rate: np.ndarray, n_intervals: int) -> np.ndarray:
    """Raw cut points giving every interval the same integral of ``rate`` over ``grid``.

    ``rate`` holds one value per gap; the integral is piecewise linear in x, so
    cuts are found by exact inversion within the containing gap.
    """
    mass = np.concatenate([[0.0], np.cumsum(rate * np.diff(grid))])
    targets = mass[-1] * np.arange(1, n_intervals) / n_intervals
    return np.interp(targets, mass, grid)


def _snap(raw_cuts: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Move each cut to the midpoint between the two observed values around it.

    Cuts landing on the same midpoint are pushed apart to neighbouring
    midpoints so that every interval keeps at least one distinct value.
    """
    distinct = np.unique(targets)
    n_cuts = len(raw_cuts)
    if n_cuts == 0:
        return np.asarray([], dtype=float)
    if n_cuts > len(distinct) - 1:
        raise SegmentationError(
            f"{n_cuts + 1} intervals requested but only {len(distinct)} distinct target values"
        )
    mids = 0.5 * (distinct[1:] + distinct[:-1])
    # slot j is the midpoint between distinct[j] and distinct[j+1]
    slots = np.searchsorted(distinct, raw_cuts, side="right") - 1
    slots = np.clip(slots, 0, len(mids) - 1)
    for i in range(1, n_cuts):
        slots[i] = max(slots[i], slots[i - 1] + 1)
    last = len(mids) - 1
    for i in range(n_cuts - 1, -1, -1):
        slots[i] = min(slots[i], last)
        last = slots[i] - 1
    if slots[0] < 0:
        raise SegmentationError("cannot place cut points without emptying an interval")
    return mids[slots]


def initial_segmentation(
    targets,
    n_intervals: int,
    manual_ratios=None,
    strategy: str = "fluctuation",
    bandwidth: float | None = None,
) -> SegmentationList:
    """Build the initial cut list from Train_t targets.

    Automatic mode equalises the integrated fluctuation of the kernel density
    across intervals, so steep parts of the density get narrower intervals.
    Manual mode places cuts at empirical quantiles of the cumulative ratios.
    """
    targets = np.asarray(targets, dtype=float).ravel()
    if n_intervals < 1:
        raise SegmentationError("n_intervals must be >= 1")
    if n_intervals == 1:
        return SegmentationList(())
    if manual_ratios is not None:
        ratios = np.asarray(manual_ratios, dtype=float)
        if len(ratios) != n_intervals:
            raise SegmentationError(f"{len(ratios)} ratios given for {n_intervals} intervals")
        if np.any(ratios <= 0):
            raise SegmentationError("manual ratios must be positive")
        cumulative = np.cumsum(ratios / ratios.sum())[:-1]
        raw = np.quantile(targets, cumulative, method="linear")
    else:
        if strategy not in STRATEGIES:
            raise SegmentationError(f"unknown division strategy {strategy!r}")
        curve = kde_density(targets, bandwidth)
        raw = equal_mass_cuts(curve.grid, STRATEGIES[strategy](curve), n_intervals)
    seg = SegmentationList(tuple(_snap(raw, targets)))
    counts = np.bincount(seg.labels(targets), minlength=n_intervals)
    if np.any(counts == 0):
        raise SegmentationError(f"empty interval after snapping: counts {counts.tolist()}")
    return seg
