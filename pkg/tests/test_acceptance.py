"""Acceptance criteria 1-8.

Each test records a single ``criterion N: PASS|FAIL|SKIP | ...`` line (see the
``acceptance`` fixture) before asserting, so the summary shows every outcome
even when an assertion fails.
"""

import json
import os
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from dynclass.baselines import SyntheticSpec, generate_synthetic, gmm, kmeans
from dynclass.classifiers import ConfusionMatrix, classification_loss
from dynclass.cli import main
from dynclass.dataset import Dataset, normalize, split_tt
from dynclass.dynamic_loop import LoopConfig, count_penalty, degree_penalty, run_dynamic_classification, score
from dynclass.exclusion import ExclusionConfig, apply_exclusion, exclusion_summary, expand_intervals
from dynclass.interval_models import PredictionOutcome, fit_ols
from dynclass.metrics import miss_overkill
from dynclass.pipeline import RunConfig, dca_outcomes, fit_dca, prepare, run_compare
from dynclass.segmentation import SegmentationList, kde_density

pytestmark = pytest.mark.acceptance

REDUCED = {"random_forest": {"n_trees": 30}, "gradient_boosted_trees": {"n_rounds": 30}}


def _rows(doc):
    return {(r["seed"], r["method"]): r for r in doc["rows"]}


def _status(ok):
    return "PASS" if ok else "FAIL"


# -- 1 ---------------------------------------------------------------------


def test_criterion_1_formula_exactness(acceptance):
    t0 = time.perf_counter()
    checks = {}
    checks["score constant"] = abs(score([0.2] * 12) - 0.2)
    checks["score min/mean"] = abs(score([0.1] + [0.2 + 0.1 / 9] * 9 + [0.1]) - 0.5 * 0.1 - 0.5 * 0.2)
    checks["score short list"] = abs(score([0.3, 0.2, 0.1]) - 0.15)
    checks["penalty x=0"] = abs(degree_penalty(0, 4) - 1.0)
    checks["penalty x=N"] = abs(degree_penalty(4, 4) - 2.0)
    checks["penalty 2 of 4"] = abs(degree_penalty(2, 4) - 1.25)
    checks["count penalty"] = abs(count_penalty(3) - 9.0)
    checks["loss"] = abs(classification_loss(ConfusionMatrix(np.array([[45, 5], [10, 40]]))) - 0.15)
    flagged = [PredictionOutcome(i, 0, 0.0, 0.0, 0.0, i < 3644) for i in range(85227)]
    summary = exclusion_summary(flagged)
    checks["excluded rate"] = abs(summary["excluded_rate"] - float(Fraction(3644, 85227)))
    checks["excluded pct 4dp"] = abs(round(100 * summary["excluded_rate"], 4) - 4.2756)
    checks["retained pct 4dp"] = abs(round(100 * summary["retained_rate"], 4) - 95.7244)
    elapsed = time.perf_counter() - t0
    worst = max(checks, key=checks.get)
    ok = all(v <= 1e-12 for v in checks.values()) and elapsed < 1.0
    acceptance(1, _status(ok), f"{len(checks)} hand values, max deviation {checks[worst]:.1e} ({worst}); "
               f"excluded 3644/85227 = {100 * summary['excluded_rate']:.4f}%; {elapsed:.2f}s")
    assert ok, checks


# -- 2 ---------------------------------------------------------------------


def test_criterion_2_degenerate_equivalence(acceptance):
    ds = generate_synthetic(SyntheticSpec(10000, 4, "normal", 0.9, 0.1, seed=5))
    cfg = RunConfig(seed=3, n_intervals=1, cluster_k=1)
    t0 = time.perf_counter()
    rows = _rows(run_compare(cfg, ds))
    elapsed = time.perf_counter() - t0
    keys = ["mse", "r2", "within_0.01", "within_0.005"]
    dp = rows[(3, "DP")]
    worst = 0.0
    for method in ("KC", "GC", "DC"):
        for k in keys:
            worst = max(worst, abs(rows[(3, method)][k] - dp[k]) / max(abs(dp[k]), 1.0))
    ok = worst <= 1e-9 and elapsed < 10
    acceptance(2, _status(ok), f"N=1 DC and k=1 KC/GC vs DP on 10k rows: max rel. deviation {worst:.1e} "
               f"over {keys}; {elapsed:.1f}s")
    assert ok


# -- 3 ---------------------------------------------------------------------


def _max_relative_width(cuts, lo, hi):
    edges = [lo, *cuts, hi]
    return max((b - a) / min(abs(a), abs(b)) for a, b in zip(edges[:-1], edges[1:]))


def test_criterion_3_zero_missed_detection(acceptance):
    t0 = time.perf_counter()
    ds = generate_synthetic(SyntheticSpec(50000, 4, "normal", 1.0, 0.0, seed=0))
    cfg = RunConfig(seed=0, n_intervals=4, exclusion_factors=1.0)
    data = prepare(cfg, ds)
    model = fit_dca(cfg, data)
    outcomes = dca_outcomes(model, data)
    cuts = model.ensemble.raw_segmentation().cuts
    lo, hi = model.ensemble.target_range
    assert lo > 0, "relative widths need positive targets"
    tau = _max_relative_width(cuts, lo, hi)
    excluded = np.array([o.excluded for o in outcomes])
    preds = np.array([o.value for o in outcomes])
    mo = miss_overkill(excluded, data.test.y, preds, tau)
    elapsed = time.perf_counter() - t0
    dc_error = model.dc_result.dc_error
    ok = dc_error == 0 and mo["missed_count"] == 0 and excluded.mean() < 0.10 and elapsed < 30
    acceptance(3, _status(ok), f"50k rows, dc_error={dc_error:.4f}, tau={tau:.4f}, missed={mo['missed_count']}, "
               f"excluded_rate={excluded.mean():.4%}, overkill={mo['overkill_count']}; {elapsed:.1f}s")
    assert ok


# -- 4 ---------------------------------------------------------------------

SWEEP = (1.0, 0.999, 0.995, 0.99, 0.98, 0.95, 0.9)


@pytest.mark.slow
def test_criterion_4_degradation_past_five_percent(acceptance):
    """Fixed config, decreasing feature-target correlation.

    Missed counts are reported at the default accuracy tau (1%) and at the
    widest relative interval width of the correlation-1 run.
    """
    t0 = time.perf_counter()
    cfg = RunConfig(seed=0, n_intervals=4, exclusion_factors=1.0, max_iterations=10,
                    classifier_params=REDUCED)
    tau = cfg.taus[0]
    tau_wide = None
    table = []
    for rho in SWEEP:
        ds = generate_synthetic(SyntheticSpec(6000, 4, "normal", rho, 0.0, seed=0))
        data = prepare(cfg, ds)
        model = fit_dca(cfg, data)
        outcomes = dca_outcomes(model, data)
        if tau_wide is None:
            tau_wide = _max_relative_width(model.ensemble.raw_segmentation().cuts, *model.ensemble.target_range)
        excluded = np.array([o.excluded for o in outcomes])
        preds = np.array([o.value for o in outcomes])
        missed = miss_overkill(excluded, data.test.y, preds, tau)["missed_count"]
        missed_wide = miss_overkill(excluded, data.test.y, preds, tau_wide)["missed_count"]
        table.append((rho, model.dc_result.dc_error, missed, missed_wide, excluded.mean()))
    elapsed = time.perf_counter() - t0
    print(f"{'rho':>6} {'dc_error':>9} {'missed@1%':>10} {'missed@wide':>12} {'excluded':>9}")
    for rho, err, m, mw, ex in table:
        print(f"{rho:6.3f} {err:9.4f} {m:10d} {mw:12d} {ex:9.4f}")
    clean = [m for _, err, m, _, _ in table if err == 0]
    dirty = [m for _, err, m, _, _ in table if err > 0.05]
    first = next(((rho, err) for rho, err, m, _, _ in table if m > 0), None)
    ok = bool(clean) and all(m == 0 for m in clean) and bool(dirty) and all(m > 0 for m in dirty) and elapsed < 300
    where = f"first missed>0 at rho={first[0]} (dc_error {first[1]:.4f})" if first else "missed never > 0"
    trail = ", ".join(f"{rho}:{err:.3f}/{m}" for rho, err, m, _, _ in table)
    acceptance(4, _status(ok), f"rho:dc_error/missed@1% = {trail}; {where}; "
               f"missed@wide tau {tau_wide:.3f} = {[mw for *_, mw, _ in table]}; {elapsed:.0f}s")
    assert ok


# -- 5 ---------------------------------------------------------------------

CALIFORNIA_ENV = "DYNCLASS_CALIFORNIA_CSV"


def _california():
    """Housing data from a local CSV (env var) or an sklearn cache; None if neither exists."""
    path = os.environ.get(CALIFORNIA_ENV)
    if path and Path(path).is_file():
        frame = pd.read_csv(path)
        target = "median_house_value" if "median_house_value" in frame.columns else "MedHouseVal"
        frame = frame.select_dtypes("number").dropna()
        feats = [c for c in frame.columns if c != target]
        return Dataset(tuple(feats), frame[feats].to_numpy(float), frame[target].to_numpy(float),
                       target_name=target)
    try:
        from sklearn.datasets import fetch_california_housing

        bunch = fetch_california_housing(download_if_missing=False)
    except (OSError, ImportError):
        return None
    return Dataset(tuple(bunch.feature_names), bunch.data, bunch.target, target_name="MedHouseVal")


@pytest.mark.slow
def test_criterion_5_california_housing(acceptance):
    ds = _california()
    if ds is None:
        acceptance(5, "SKIP", f"unverified: housing data not available offline; set {CALIFORNIA_ENV} "
                   "to a local CSV to run")
        pytest.skip("California Housing data not available offline")
    t0 = time.perf_counter()
    cfg = RunConfig(seed=0, n_intervals=3)
    rows = _rows(run_compare(cfg, ds))
    dc, dce = rows[(0, "DC")], rows[(0, "DC-E")]
    elapsed = time.perf_counter() - t0
    ok = (dc["mse_normalized"] <= 0.015 and dc["r2"] >= 0.70 and dce["mse_normalized"] < dc["mse_normalized"]
          and dce["r2"] > dc["r2"] and elapsed < 600)
    acceptance(5, _status(ok), f"DC mse={dc['mse_normalized']:.4f} r2={dc['r2']:.4f}; DC-E "
               f"mse={dce['mse_normalized']:.4f} r2={dce['r2']:.4f} excluded={dce['excluded_rate']:.2%}; "
               f"dc_error={dc['dc_error']:.4f}; {elapsed:.0f}s")
    assert ok


# -- 6 ---------------------------------------------------------------------


def obesity_standin(seed=0, n=2111, n_features=16, curvature=6.1, rel_noise=0.052) -> Dataset:
    """Synthetic stand-in for the obesity-estimation data (2111 rows, 16 features).

    One feature carries the latent driver ``u`` exactly; the rest are weak noisy
    copies.  The target ``exp(curvature * u) * (1 + noise)`` is calibrated so a
    single linear model reaches R2 ~ 0.66 and the noise ceiling is R2 ~ 0.996,
    which leaves an oracle interval error of about 2% at four quartile intervals.
    """
    rng = np.random.default_rng(seed)
    u = rng.uniform(0, 1, n)
    y = np.exp(curvature * u) * (1 + rng.normal(0, rel_noise, n))
    rest = 0.3 * u[:, None] + rng.normal(0, 1, (n, n_features - 1))
    return Dataset(tuple(f"f{j}" for j in range(n_features)), np.column_stack([u, rest]), y,
                   target_name="target")


@pytest.mark.slow
def test_criterion_6_low_error_regime(acceptance):
    t0 = time.perf_counter()
    ds = obesity_standin(0)
    linear_r2 = 1 - np.mean((ds.y - fit_ols(ds.X, ds.y).predict(ds.X)) ** 2) / ds.y.var()
    cfg = RunConfig(seed=0, n_intervals=4)
    rows = _rows(run_compare(cfg, ds))
    dc, dce = rows[(0, "DC")], rows[(0, "DC-E")]
    elapsed = time.perf_counter() - t0
    ok = dc["dc_error"] <= 0.05 and dce["r2"] >= dc["r2"] and elapsed < 600
    acceptance(6, _status(ok), f"synthetic stand-in (linear r2 {linear_r2:.3f}): dc_error={dc['dc_error']:.4f} "
               f"(<= 0.05: {dc['dc_error'] <= 0.05}); DC r2={dc['r2']:.4f}, DC-E r2={dce['r2']:.4f} "
               f"(DC-E >= DC: {dce['r2'] >= dc['r2']}), excluded={dce['excluded_rate']:.2%}; {elapsed:.0f}s")
    assert ok


# -- 7 ---------------------------------------------------------------------


def _check_segmentations(train_t, result):
    for cuts in result.trace.segmentations:
        cuts = np.asarray(cuts)
        assert np.all(np.diff(cuts) > 0), cuts
        counts = np.bincount(SegmentationList(tuple(cuts)).labels(train_t.y), minlength=len(cuts) + 1)
        assert counts.min() >= 1, counts


def _check_running_min(result):
    for kind, losses in result.trace.losses.items():
        assert result.trace.best_loss[kind] == min(losses)
        assert result.trace.best_iteration[kind] == int(np.argmin(losses)) + 1  # iterations count from 1
        running = np.minimum.accumulate(losses)
        assert running[-1] == result.trace.best_loss[kind]


def test_criterion_7_property_suites(acceptance):
    t0 = time.perf_counter()
    done = {}

    # segmentation ordering / occupancy after every correction, running-minimum best loss
    n_loops = 0
    for seed, (rho, n) in enumerate([(0.9, 3), (0.8, 5), (0.95, 4), (0.6, 6), (0.99, 4), (0.7, 3)]):
        ds = generate_synthetic(SyntheticSpec(1200, 3, "uniform" if seed % 2 else "normal", rho, 0.0, seed=seed))
        norm, _ = normalize(ds)
        t, p = split_tt(norm, seed)
        res = run_dynamic_classification(t, p, LoopConfig(n_intervals=n, max_iterations=12, seed=seed,
                                                          kinds=("decision_tree", "random_forest"),
                                                          classifier_params={"random_forest": {"n_trees": 10}}))
        _check_segmentations(t, res)
        _check_running_min(res)
        n_loops += len(res.trace.segmentations)
    done["segmentation+best_loss"] = f"{n_loops} segmentations"

    # exclusion monotonicity
    rng = np.random.default_rng(1)
    for _ in range(200):
        seg = SegmentationList(tuple(np.sort(rng.uniform(10, 90, 3))))
        outcomes = [PredictionOutcome(i, int(k), float(v), np.nan, np.nan)
                    for i, (k, v) in enumerate(zip(rng.integers(0, 4, 100), rng.uniform(-10, 110, 100)))]
        f = rng.uniform(1, 1.5, 4)
        a = apply_exclusion(outcomes, expand_intervals(seg, ExclusionConfig(tuple(f)), 0, 100))
        b = apply_exclusion(outcomes, expand_intervals(seg, ExclusionConfig(tuple(f + rng.uniform(0, 0.5, 4))), 0, 100))
        assert not any((not x.excluded) and y.excluded for x, y in zip(a, b))
    done["exclusion monotone"] = "200 cases"

    # KDE normalisation
    samplers = [lambda r: r.normal(size=500), lambda r: r.uniform(size=2000), lambda r: r.exponential(size=800),
                lambda r: np.concatenate([r.normal(-3, 1, 300), r.normal(4, 0.5, 300)])]
    worst = 0.0
    for s in range(20):
        curve = kde_density(samplers[s % 4](np.random.default_rng(s)))
        area = float(np.sum(np.diff(curve.grid) * 0.5 * (curve.density[1:] + curve.density[:-1])))
        worst = max(worst, abs(area - 1))
    assert worst <= 0.01
    done["kde area"] = f"max |area-1| {worst:.1e}"

    # clustering monotonicity
    for s in range(15):
        r = np.random.default_rng(s)
        X = np.vstack([r.normal(c, 1.0, size=(60, 2)) for c in r.uniform(-6, 6, size=(3, 2))])
        km = kmeans(X, 1 + s % 4, s)
        assert np.all(np.diff(km.inertia_trace) <= 1e-9 * km.inertia_trace[0])
        g = gmm(X, 1 + s % 4, s)
        assert np.all(np.diff(g.loglik_trace) >= -1e-8 * abs(g.loglik_trace[0]))
    done["kmeans/EM monotone"] = "15 fits"

    # OLS vs normal equations
    worst = 0.0
    for s in range(50):
        r = np.random.default_rng(s)
        X, y = r.normal(size=(30, 4)), r.normal(size=30)
        A = np.column_stack([np.ones(30), X])
        beta = np.linalg.solve(A.T @ A, A.T @ y)
        m = fit_ols(X, y)
        worst = max(worst, np.max(np.abs(np.r_[m.intercept, m.coefficients] - beta)))
    assert worst <= 1e-8
    done["ols"] = f"max dev {worst:.1e}"

    elapsed = time.perf_counter() - t0
    ok = elapsed < 120
    acceptance(7, _status(ok), "; ".join(f"{k}: {v}" for k, v in done.items()) + f"; {elapsed:.1f}s")
    assert ok


# -- 8 ---------------------------------------------------------------------

HEADLINE = [("DC", "mse_normalized"), ("DC", "r2"), ("DC", "dc_error"), ("DC-E", "r2"), ("DC-E", "within_0.01")]


@pytest.mark.slow
def test_criterion_8_determinism(acceptance, tmp_path):
    t0 = time.perf_counter()
    csv = tmp_path / "data.csv"
    assert main(["synth", "--n", "3000", "--features", "4", "--correlation", "0.99", "--seed", "8",
                 "--out", str(csv)]) == 0
    base = {"input": str(csv), "target": "y", "n_intervals": 4, "max_iterations": 8,
            "classifier_params": REDUCED}

    def compare(name, **extra):
        cfg = tmp_path / f"{name}.json"
        cfg.write_text(json.dumps({**base, **extra}))
        out = tmp_path / f"{name}.out.json"
        assert main(["compare", str(cfg), "--json", str(out)]) == 0
        return out

    first = compare("a", seed=1).read_bytes()
    second = compare("b", seed=1).read_bytes()
    identical = first == second

    spread_doc = json.loads(compare("spread", seeds=[0, 1, 2, 3, 4]).read_text())
    pair_doc = json.loads(compare("pair", seeds=[11, 12]).read_text())

    def metric(doc, seed, method, key):
        return next(r[key] for r in doc["rows"] if r["seed"] == seed and r["method"] == method)

    verdicts = []
    for method, key in HEADLINE:
        vals = [metric(spread_doc, s, method, key) for s in range(5)]
        spread = max(vals) - min(vals)
        diff = abs(metric(pair_doc, 11, method, key) - metric(pair_doc, 12, method, key))
        fine = diff < 2 * spread if spread > 0 else diff == 0
        verdicts.append((f"{method}.{key}", diff, spread, fine))
    elapsed = time.perf_counter() - t0
    ok = identical and all(v[3] for v in verdicts) and elapsed < 300
    detail = ", ".join(f"{n} |d|={d:.4g} vs 2x{s:.4g}" for n, d, s, _ in verdicts)
    acceptance(8, _status(ok), f"byte-identical={identical}; seeds 11 vs 12 against spread of seeds 0-4: "
               f"{detail}; {elapsed:.0f}s")
    assert ok
