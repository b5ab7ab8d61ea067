"""End-to-end orchestration shared by the command line and the acceptance tests."""

from __future__ import annotations

import contextlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import baselines as bl
from .classifiers import KINDS
from .dataset import Dataset, NormalizationParams, fit_normalization, iqr_filter, load_csv, split, split_tt
from .dynamic_loop import DynamicClassificationResult, LoopConfig, run_dynamic_classification
from .exclusion import ExclusionConfig, apply_exclusion, exclusion_summary
from .interval_models import REGRESSORS, IntervalEnsemble, build_ensemble, predict
from .metrics import DEFAULT_TAUS, evaluate

FORMAT_VERSION = 1
METHODS = ("DP", "KC", "GC", "DC", "DC-E")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str, exit_code: int = 1):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.exit_code = exit_code


INPUT_ERRORS = (ConfigError, ValueError, FileNotFoundError, KeyError)


@contextlib.contextmanager
def stage(name: str, input_stage: bool = False):
    """Re-raise anything from the block as a StageError naming ``name``.

    Errors from an input stage are reported as invalid input (exit code 2).
    """
    try:
        yield
    except StageError:
        raise
    except INPUT_ERRORS as exc:
        raise StageError(name, str(exc), 2 if input_stage else 1) from exc
    except Exception as exc:  # noqa: BLE001 - surfaced with the stage name
        raise StageError(name, f"{type(exc).__name__}: {exc}", 1) from exc


@dataclass
class RunConfig:
    input: str | None = None
    target: str | None = None
    seed: int = 0
    seeds: list[int] | None = None
    train_fraction: float = 0.5
    iqr_multiplier: float | None = 1.5
    n_intervals: int = 4
    manual_ratios: list[float] | None = None
    division_strategy: str = "fluctuation"
    kinds: list[str] = field(default_factory=lambda: list(KINDS))
    classifier_params: dict = field(default_factory=dict)
    max_iterations: int = 50
    step_fraction: float = 0.25
    min_interval_share: float = 0.5
    stall_window: int = 15
    instability_std: float = 0.05
    exclusion_factors: float | list[float] = 1.05
    drop_first: bool = False
    drop_last: bool = False
    regressor_kind: str = "ordinary_least_squares"
    redundancy_divisor: float = 4.0
    baselines: list[str] = field(default_factory=lambda: ["DP", "KC", "GC"])
    cluster_k: int | None = None
    taus: list[float] = field(default_factory=lambda: list(DEFAULT_TAUS))
    accuracy_tau: float | None = None
    max_workers: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        if data.get("input") and not Path(data["input"]).is_absolute():
            data["input"] = str((path.parent / data["input"]).resolve())
        return cls.from_dict(data)

    def validate(self):
        def check(cond, msg):
            if not cond:
                raise ConfigError(msg)

        check(isinstance(self.n_intervals, int) and self.n_intervals >= 1, "n_intervals must be an integer >= 1")
        check(0 < self.train_fraction < 1, "train_fraction must lie in (0, 1)")
        check(self.iqr_multiplier is None or self.iqr_multiplier > 0, "iqr_multiplier must be positive or null")
        if self.manual_ratios is not None:
            check(len(self.manual_ratios) == self.n_intervals, "manual_ratios length must equal n_intervals")
            check(all(r > 0 for r in self.manual_ratios), "manual_ratios must be positive")
        check(self.division_strategy in ("fluctuation", "density"), "division_strategy must be fluctuation or density")
        check(len(self.kinds) > 0 and all(k in KINDS for k in self.kinds), f"kinds must be a non-empty subset of {KINDS}")
        check(isinstance(self.max_iterations, int) and self.max_iterations >= 1, "max_iterations must be >= 1")
        check(0 < self.step_fraction <= 0.5, "step_fraction must lie in (0, 0.5]")
        check(0 <= self.min_interval_share <= 1, "min_interval_share must lie in [0, 1]")
        factors = self.factor_list()
        check(len(factors) == self.n_intervals, "exclusion_factors length must equal n_intervals")
        check(all(f >= 1 for f in factors), "exclusion_factors must be >= 1")
        check(self.regressor_kind in REGRESSORS, f"regressor_kind must be one of {sorted(REGRESSORS)}")
        check(self.redundancy_divisor > 0, "redundancy_divisor must be positive")
        check(all(b in ("DP", "KC", "GC") for b in self.baselines), "baselines must be among DP, KC, GC")
        check(self.cluster_k is None or self.cluster_k >= 1, "cluster_k must be >= 1")
        check(len(self.taus) > 0 and all(t > 0 for t in self.taus), "taus must be positive")
        check(self.accuracy_tau is None or self.accuracy_tau > 0, "accuracy_tau must be positive")

    def factor_list(self) -> list[float]:
        if isinstance(self.exclusion_factors, (int, float)):
            return [float(self.exclusion_factors)] * self.n_intervals
        return [float(f) for f in self.exclusion_factors]

    def exclusion(self) -> ExclusionConfig:
        return ExclusionConfig(tuple(self.factor_list()), self.drop_first, self.drop_last)

    def loop_config(self, seed: int) -> LoopConfig:
        return LoopConfig(
            n_intervals=self.n_intervals,
            manual_ratios=self.manual_ratios,
            division_strategy=self.division_strategy,
            kinds=tuple(self.kinds),
            classifier_params=self.classifier_params,
            max_iterations=self.max_iterations,
            step_fraction=self.step_fraction,
            min_interval_share=self.min_interval_share,
            stall_window=self.stall_window,
            instability_std=self.instability_std,
            seed=seed,
            max_workers=self.max_workers,
        )

    def seed_list(self) -> list[int]:
        return list(self.seeds) if self.seeds else [self.seed]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PreparedData:
    train: Dataset          # raw units
    test: Dataset
    train_n: Dataset        # min-max units of the training set
    test_n: Dataset
    params: NormalizationParams
    iqr_removed: int
    dropped_rows: int

    @property
    def target_span(self) -> float:
        return self.params.target_max - self.params.target_min


def prepare(cfg: RunConfig, ds: Dataset | None = None, seed: int | None = None) -> PreparedData:
    seed = cfg.seed if seed is None else seed
    if ds is None:
        with stage("load", input_stage=True):
            if not cfg.input or not cfg.target:
                raise ConfigError("config needs 'input' and 'target'")
            ds = load_csv(cfg.input, cfg.target)
    with stage("preprocess", input_stage=True):
        removed = 0
        if cfg.iqr_multiplier is not None:
            ds, removed = iqr_filter(ds, cfg.iqr_multiplier)
        train, test = split(ds, cfg.train_fraction, seed)
        params = fit_normalization(train)
    return PreparedData(train, test, params.transform(train), params.transform(test), params,
                        removed, ds.dropped_rows)


@dataclass
class DCAModel:
    ensemble: IntervalEnsemble
    dc_result: DynamicClassificationResult


def fit_dca(cfg: RunConfig, data: PreparedData, seed: int | None = None) -> DCAModel:
    seed = cfg.seed if seed is None else seed
    with stage("split"):
        train_t, train_p = split_tt(data.train_n, seed)
    with stage("dynamic_classification"):
        result = run_dynamic_classification(train_t, train_p, cfg.loop_config(seed))
    with stage("interval_models"):
        raw_range = (float(data.train.y.min()), float(data.train.y.max()))
        ensemble = build_ensemble(data.train_n, result, data.params, cfg.exclusion(),
                                  cfg.redundancy_divisor, cfg.regressor_kind, raw_range)
    return DCAModel(ensemble, result)


def score_outcomes(outcomes, truths, cfg: RunConfig, dc_error=None, target_span=None) -> dict:
    """DC (all rows) and DC-E (retained rows) reports for flagged outcomes."""
    truths = np.asarray(truths, dtype=float)
    preds = np.array([o.value for o in outcomes])
    excluded = np.array([o.excluded for o in outcomes], dtype=bool)
    acc_tau = cfg.accuracy_tau or cfg.taus[0]
    dc = evaluate(truths, preds, cfg.taus, None, acc_tau, dc_error, target_span)
    keep = ~excluded
    if keep.sum() >= 2 and np.ptp(truths[keep]) > 0:
        dce = evaluate(truths[keep], preds[keep], cfg.taus, None, acc_tau, dc_error, target_span)
    else:
        dce = None
    mo = evaluate(truths, preds, cfg.taus, excluded, acc_tau, dc_error, target_span)
    if dce is not None:
        for key in ("excluded_rate", "missed_count", "missed_rate", "overkill_count", "overkill_rate"):
            setattr(dce, key, getattr(mo, key))
    return {"DC": dc, "DC-E": dce}


def dca_outcomes(model: DCAModel, data: PreparedData):
    outcomes = predict(model.ensemble, data.test.X, data.test.row_ids)
    return apply_exclusion(outcomes, model.ensemble.valid_ranges())


def train_report(cfg: RunConfig, data: PreparedData, model: DCAModel, seed: int) -> dict:
    res = model.dc_result
    outcomes = dca_outcomes(model, data)
    reports = score_outcomes(outcomes, data.test.y, cfg, res.dc_error, data.target_span)
    raw_cuts = list(model.ensemble.raw_segmentation().cuts)
    return {
        "seed": seed,
        "n_intervals": cfg.n_intervals,
        "classifier_kind": res.kind,
        "dc_error": res.dc_error,
        "stop_reason": res.stop_reason,
        "iterations": res.iterations,
        "warnings": list(res.warnings),
        "initial_segmentation": list(data.params.inverse_target(np.asarray(res.initial_segmentation.cuts))),
        "optimal_segmentation": raw_cuts,
        "loss_trace": res.trace.to_dict(),
        "train_interval_counts": model.ensemble.interval_counts,
        "rows": {"train": len(data.train), "test": len(data.test), "iqr_removed": data.iqr_removed,
                 "dropped_at_load": data.dropped_rows},
        "test_exclusion": exclusion_summary(outcomes, cfg.n_intervals) if outcomes else None,
        "test_metrics": {k: (v.to_dict() if v is not None else None) for k, v in reports.items()},
    }


def run_compare(cfg: RunConfig, ds: Dataset | None = None) -> dict:
    """DP / KC / GC / DC / DC-E on the same split, once per configured seed."""
    rows = []
    for seed in cfg.seed_list():
        data = prepare(cfg, ds, seed)
        k = cfg.cluster_k or cfg.n_intervals
        inv = data.params.inverse_target
        span = data.target_span
        with stage("baselines"):
            results = {}
            if "DP" in cfg.baselines:
                results["DP"] = bl.baseline_dp(data.train_n, data.test_n, cfg.taus, span, inv).report
            if "KC" in cfg.baselines:
                results["KC"] = bl.baseline_kmeans(data.train_n, data.test_n, k, seed, cfg.taus, span, inv).report
            if "GC" in cfg.baselines:
                results["GC"] = bl.baseline_gmm(data.train_n, data.test_n, k, seed, cfg.taus, span, inv).report
        model = fit_dca(cfg, data, seed)
        with stage("evaluate"):
            outcomes = dca_outcomes(model, data)
            results.update(score_outcomes(outcomes, data.test.y, cfg, model.dc_result.dc_error, span))
        for method, rep in results.items():
            row = {"seed": seed, "method": method, "N": cfg.n_intervals}
            if rep is None:
                row.update({"mse": None, "mse_normalized": None, "r2": None})
            else:
                row.update({
                    "mse": rep.mse,
                    "mse_normalized": rep.mse_normalized,
                    "r2": rep.r2,
                    "average_accuracy": rep.average_accuracy,
                    **{f"within_{t}": v for t, v in rep.within_ratio.items()},
                    "excluded_rate": rep.excluded_rate,
                    "missed_count": rep.missed_count,
                    "overkill_count": rep.overkill_count,
                })
            row["dc_error"] = model.dc_result.dc_error if method in ("DC", "DC-E") else None
            rows.append(row)
    return {"format_version": FORMAT_VERSION, "config": cfg.to_dict(), "rows": rows}


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return None if not math.isfinite(obj) else obj
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, non-finite floats as null."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def artifact_dict(cfg: RunConfig, model: DCAModel, data: PreparedData, feature_names) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "feature_names": list(feature_names),
        "target_name": data.train.target_name,
        "config": cfg.to_dict(),
        "ensemble": model.ensemble.to_dict(),
        "classifier_kind": model.dc_result.kind,
        "dc_error": model.dc_result.dc_error,
        "loss_trace": model.dc_result.trace.to_dict(),
        "warnings": model.dc_result.warnings,
    }


def load_artifact(path) -> tuple[dict, IntervalEnsemble]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"artifact not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"artifact is not valid JSON: {exc}") from None
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigError(f"artifact format version {version!r} != supported {FORMAT_VERSION}")
    return doc, IntervalEnsemble.from_dict(doc["ensemble"])
