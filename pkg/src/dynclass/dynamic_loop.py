"""Iterative refinement of interval boundaries against held-out classification loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .classifiers import (
    KINDS,
    ClassifierModel,
    classification_loss,
    confusion_from_labels,
    constant_model,
    train_candidates,
)
from .dataset import Dataset
from .segmentation import SegmentationList, initial_segmentation

log = logging.getLogger(__name__)

CONTINUE, STALLED, UNSTABLE = "continue", "stalled", "unstable"


class DynamicClassificationError(RuntimeError):
    pass


def degree_penalty(x, n):
    """Penalty for a sample misclassified by ``x`` intervals out of ``n``."""
    return (np.asarray(x, dtype=float) / n) ** 2 + 1.0


def count_penalty(m):
    return np.asarray(m, dtype=float) ** 2


@dataclass(frozen=True)
class PenaltyRecord:
    degree: np.ndarray          # X per sample: |true - predicted| interval distance
    sample_penalty: np.ndarray  # Y per sample
    class_misclassified: np.ndarray  # m_c per true class
    class_penalty: np.ndarray   # m_c ** 2
    n_intervals: int


def penalize(true_labels, pred_labels, n_intervals: int) -> PenaltyRecord:
    t = np.asarray(true_labels, dtype=int)
    p = np.asarray(pred_labels, dtype=int)
    x = np.abs(t - p)
    m = np.bincount(t[x > 0], minlength=n_intervals)
    return PenaltyRecord(x, degree_penalty(x, n_intervals), m, count_penalty(m), n_intervals)


def build_sample_weights(penalties: PenaltyRecord, labels) -> np.ndarray:
    """Per-sample training weights from the degree and count penalties, scaled to mean 1."""
    labels = np.asarray(labels, dtype=int)
    wrong = penalties.degree > 0
    w = np.ones(len(labels))
    total = int(wrong.sum())
    if total:
        boost = 1.0 + penalties.class_penalty[labels[wrong]] / total**2
        w[wrong] = penalties.sample_penalty[wrong] * boost
    return w / w.mean()


def transfer_weights(source_targets, source_weights, dest_targets) -> np.ndarray:
    """Give each destination sample the weight of the nearest source sample by target value."""
    src = np.asarray(source_targets, dtype=float)
    order = np.argsort(src, kind="stable")
    src, sw = src[order], np.asarray(source_weights, dtype=float)[order]
    dest = np.asarray(dest_targets, dtype=float)
    pos = np.clip(np.searchsorted(src, dest), 1, len(src) - 1) if len(src) > 1 else np.zeros(len(dest), int)
    if len(src) > 1:
        left_closer = (dest - src[pos - 1]) <= (src[pos] - dest)
        pos = np.where(left_closer, pos - 1, pos)
    w = sw[pos]
    return w / w.mean()


def _next_above(sorted_values, v):
    i = np.searchsorted(sorted_values, v, side="right")
    return sorted_values[i] if i < len(sorted_values) else None


def _next_below(sorted_values, v):
    i = np.searchsorted(sorted_values, v, side="left") - 1
    return sorted_values[i] if i >= 0 else None


def correct_boundaries(seg: SegmentationList, train_p_targets, true_labels, pred_labels,
                       step_fraction: float = 0.25, train_t_targets=None,
                       min_counts=None) -> SegmentationList:
    """Shift each cut toward the side holding more penalty-weighted contested samples.

    For cut k (between intervals k-1 and k), samples whose true interval is k
    but which were predicted below k, and whose targets lie in interval k, pull
    the cut up; the mirror case pulls it down.  The cut moves just past the
    ``ceil(step_fraction * count)``-th contested target, and is clamped so cuts
    stay ordered and every interval keeps at least ``min_counts[k]`` (default 1)
    Train_t targets.
    """
    if not 0 < step_fraction <= 0.5:
        raise ValueError("step_fraction must lie in (0, 0.5]")
    cuts = list(seg.cuts)
    if not cuts:
        return seg
    targets = np.asarray(train_p_targets, dtype=float)
    t = np.asarray(true_labels, dtype=int)
    p = np.asarray(pred_labels, dtype=int)
    anchor = targets if train_t_targets is None else np.asarray(train_t_targets, dtype=float)
    known = np.unique(np.concatenate([targets, anchor]))
    anchor = np.sort(anchor)
    weight = degree_penalty(np.abs(t - p), seg.n_intervals)
    floor = np.ones(seg.n_intervals, dtype=int) if min_counts is None else np.maximum(
        np.asarray(min_counts, dtype=int), 1)

    for j in range(len(cuts)):
        k = j + 1
        c = cuts[j]
        lo = cuts[j - 1] if j > 0 else -np.inf
        hi = cuts[j + 1] if j + 1 < len(cuts) else np.inf
        up_mask = (t >= k) & (p < k) & (targets >= c) & (targets < hi)
        down_mask = (t < k) & (p >= k) & (targets < c) & (targets >= lo)
        U, D = weight[up_mask].sum(), weight[down_mask].sum()
        if U == D:
            continue
        if U > D:
            contested = np.sort(targets[up_mask])
            q = max(1, int(np.ceil(step_fraction * len(contested))))
            pivot = contested[q - 1]
            nxt = _next_above(known, pivot)
            new = 0.5 * (pivot + nxt) if nxt is not None else None
            # the interval above must keep its floor[k] largest Train_t targets
            in_band = anchor[(anchor >= c) & (anchor < hi)]
            if len(in_band) < floor[k]:
                continue
            top = in_band[-floor[k]]
            if new is None or new > top:
                below = _next_below(known, top)
                new = 0.5 * (below + top) if below is not None else None
            if new is None or not (c < new < hi):
                continue
        else:
            contested = np.sort(targets[down_mask])[::-1]
            q = max(1, int(np.ceil(step_fraction * len(contested))))
            pivot = contested[q - 1]
            prv = _next_below(known, pivot)
            new = 0.5 * (pivot + prv) if prv is not None else None
            # the interval below must keep its floor[k-1] smallest Train_t targets
            in_band = anchor[(anchor < c) & (anchor >= lo)]
            if len(in_band) < floor[k - 1]:
                continue
            bottom = in_band[floor[k - 1] - 1]
            if new is None or new <= bottom:
                above = _next_above(known, bottom)
                new = 0.5 * (bottom + above) if above is not None else None
            if new is None or not (lo < new < c):
                continue
        cuts[j] = float(new)
    return SegmentationList(tuple(cuts))


def score(loss_list) -> float:
    """Half the best loss plus half the mean of the last ten losses (all, if fewer)."""
    losses = np.asarray(loss_list, dtype=float)
    if losses.size == 0:
        raise ValueError("empty loss list")
    return 0.5 * losses.min() + 0.5 * losses[-10:].mean()


def convergence_check(loss_list, stall_window: int = 15, stall_tol: float = 1e-12,
                      instability_window: int = 10, instability_std: float = 0.05) -> str:
    losses = np.asarray(loss_list, dtype=float)
    if len(losses) >= stall_window and np.ptp(losses[-stall_window:]) <= stall_tol:
        return STALLED
    if len(losses) >= instability_window and losses[-instability_window:].std() > instability_std:
        return UNSTABLE
    return CONTINUE


@dataclass
class LoopConfig:
    n_intervals: int = 4
    manual_ratios: list | None = None
    division_strategy: str = "fluctuation"
    kinds: tuple = KINDS
    classifier_params: dict = field(default_factory=dict)
    max_iterations: int = 50
    step_fraction: float = 0.25
    min_interval_share: float = 0.5
    stall_window: int = 15
    stall_tol: float = 1e-12
    instability_window: int = 10
    instability_std: float = 0.05
    seed: int = 0
    max_workers: int = 1


@dataclass
class LossTrace:
    losses: dict[str, list[float]]
    best_loss: dict[str, float]
    best_iteration: dict[str, int]
    scores: dict[str, float]
    segmentations: list[tuple[float, ...]]

    def to_dict(self) -> dict:
        return {
            "losses": self.losses,
            "best_loss": self.best_loss,
            "best_iteration": self.best_iteration,
            "scores": self.scores,
            "segmentations": [list(s) for s in self.segmentations],
        }


@dataclass
class DynamicClassificationResult:
    kind: str
    model: ClassifierModel
    segmentation: SegmentationList
    initial_segmentation: SegmentationList
    trace: LossTrace
    dc_error: float
    warnings: list[str]
    stop_reason: str
    iterations: int


def _warn(warnings: list, item: str):
    if item not in warnings:
        warnings.append(item)
        log.warning("dynamic classification: %s", item)


def run_dynamic_classification(train_t: Dataset, train_p: Dataset,
                               config: LoopConfig | None = None) -> DynamicClassificationResult:
    """Alternate pseudo-labelling, candidate training, scoring, penalties and cut correction.

    The winning kind is the one with the lowest blended score; its best-loss
    iteration supplies the final model and segmentation.
    """
    cfg = config or LoopConfig()
    n = cfg.n_intervals
    seg = initial_segmentation(train_t.y, n, cfg.manual_ratios, cfg.division_strategy)
    if n == 1:
        trace = LossTrace({}, {}, {}, {}, [seg.cuts])
        return DynamicClassificationResult("constant", constant_model(1), seg, seg, trace,
                                           0.0, [], "single_interval", 0)

    kinds = tuple(cfg.kinds)
    losses = {k: [] for k in kinds}
    best = {k: (np.inf, None, None, -1) for k in kinds}  # loss, seg, model, iteration
    history = []
    warnings: list[str] = []
    weights_t = np.ones(len(train_t))
    stop_reason = "max_iterations"
    initial = seg
    min_counts = np.floor(cfg.min_interval_share * np.bincount(seg.labels(train_t.y), minlength=n))
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        history.append(seg.cuts)
        labels_t = seg.labels(train_t.y)
        labels_p = seg.labels(train_p.y)
        counts = np.bincount(labels_t, minlength=n)
        if np.any(counts == 0):
            raise DynamicClassificationError(f"interval emptied in Train_t: counts {counts.tolist()}")
        models = train_candidates(train_t.X, labels_t, weights_t, cfg.seed, kinds, n,
                                  cfg.classifier_params, cfg.max_workers)
        preds = {}
        for kind, model in zip(kinds, models):
            preds[kind] = model.predict(train_p.X)
            loss = classification_loss(confusion_from_labels(labels_p, preds[kind], n))
            losses[kind].append(loss)
            if loss < best[kind][0]:
                best[kind] = (loss, seg, model, it)
        lead = min(kinds, key=lambda k: (losses[k][-1], kinds.index(k)))
        log.debug("iteration %d: %s", it, {k: losses[k][-1] for k in kinds})

        statuses = {k: convergence_check(losses[k], cfg.stall_window, cfg.stall_tol,
                                         cfg.instability_window, cfg.instability_std) for k in kinds}
        if any(s == UNSTABLE for s in statuses.values()):
            _warn(warnings, UNSTABLE)
        if losses[lead][-1] == 0.0:
            stop_reason = "perfect"
            break
        if statuses[lead] == STALLED:
            _warn(warnings, STALLED)
            stop_reason = "stalled"
            break
        if it == cfg.max_iterations:
            break

        penalties = penalize(labels_p, preds[lead], n)
        weights_p = build_sample_weights(penalties, labels_p)
        new_seg = correct_boundaries(seg, train_p.y, labels_p, preds[lead],
                                     cfg.step_fraction, train_t.y, min_counts)
        new_weights = transfer_weights(train_p.y, weights_p, train_t.y)
        if new_seg == seg and np.array_equal(new_weights, weights_t):
            # every later iteration would repeat this one exactly
            _warn(warnings, STALLED)
            stop_reason = "fixed_point"
            break
        seg, weights_t = new_seg, new_weights

    scores = {k: score(losses[k]) for k in kinds}
    winner = min(kinds, key=lambda k: (scores[k], best[k][0], kinds.index(k)))
    loss, best_seg, model, _ = best[winner]
    trace = LossTrace(losses, {k: best[k][0] for k in kinds},
                      {k: best[k][3] for k in kinds}, scores, history)
    return DynamicClassificationResult(winner, model, best_seg, initial, trace, float(loss),
                                       warnings, stop_reason, it)
