"""Acceptance criteria 1-11, each at its stated tolerance.

Every test records one PASS/FAIL line; the lines are printed in the
"acceptance criteria" section of the pytest summary (and inline with -s).
The end-to-end criteria (5, 6, 7, 11) run the full pipeline and take several
minutes on one core.
"""

import math
import time

import numpy as np
import pandas as pd
import pytest
from conftest import ACCEPTANCE
from test_features import OPTS, random_table, same
from test_harness import Spy

import oracles
from autoseries.automl import PipelineConfig, Strategy, compute_update_schedule
from autoseries.cli import bundled, load_dataset, main
from autoseries.features import FeaturePlan
from autoseries.harness import (
    GlobalMeanPipeline,
    LastValuePipeline,
    RunConfig,
    run_streaming_evaluation,
)
from autoseries.metrics import PredictionLog, corr, difficulty, evaluate, rank_solutions, rmse, smape
from autoseries.models import GbdtHyperparams, Regularization, fit_gbdt, fit_linear
from autoseries.synth import SynthConfig, generate, write_dataset

L = PredictionLog.from_arrays


def verdict(n, title, ok, detail):
    line = f"criterion {n:>2} {title}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def close(a, b, rel=1e-12):
    return abs(a - b) <= rel * abs(b)


# ---- 1. metric oracle equivalence ---------------------------------------------


def test_01_metric_oracle_equivalence():
    rng = np.random.default_rng(101)
    logs = []
    for _ in range(1000):
        n = int(rng.integers(1, 501))
        scale = 10 ** rng.uniform(-3, 3)
        y = rng.normal(rng.normal() * scale, scale, n)
        kind = rng.integers(3)
        yhat = y + rng.normal(0, scale * rng.uniform(0, 2), n) if kind == 0 else (
            rng.normal(0, scale, n) if kind == 1 else np.round(y, 1))
        logs.append(L(y, yhat))
    t0 = time.perf_counter()
    ours = [(rmse(g), smape(g), corr(g)) for g in logs]
    elapsed = time.perf_counter() - t0
    bad = 0
    for g, (r, s, c) in zip(logs, ours):
        y, p = g.y.tolist(), g.yhat.tolist()
        if not (close(r, oracles.rmse(y, p)) and close(s, oracles.smape(y, p)) and close(c, oracles.corr(y, p))):
            bad += 1
    verdict(1, "metric oracle equivalence", bad == 0 and elapsed < 5,
            f"{1000 - bad}/1000 logs match, metrics took {elapsed:.2f}s")


# ---- 2. metric edge cases -----------------------------------------------------


def test_02_metric_edge_cases():
    y = np.array([3.0, -1.0, 7.5, 0.25, 12.0])
    perfect = evaluate(L(y, y))
    checks = [
        abs(perfect.rmse) <= 1e-9,
        abs(perfect.smape_percent) <= 1e-9,
        abs(perfect.corr - 1) <= 1e-9,
        abs(corr(L(y, -y)) + 1) <= 1e-9,
        abs(smape(L([1.0], [0.0]), eps=1e-8) - 200 / (1 + 1e-8)) <= 1e-9,
    ]
    verdict(2, "metric edge cases", all(checks), f"{sum(checks)}/5 exact to 1e-9")


# ---- 3. GBDT soundness --------------------------------------------------------


def small_dataset(rng):
    n = int(rng.integers(2, 31))
    F = int(rng.integers(1, 5))
    if rng.random() < 0.5:
        X = rng.integers(0, 4, size=(n, F)).astype(float)
        y = rng.integers(0, 3, size=n).astype(float)
    else:
        X = rng.normal(size=(n, F))
        y = rng.normal(size=n)
    return X, y


def test_03_gbdt_soundness():
    rng = np.random.default_rng(303)
    split_ok = mono_ok = 0
    for _ in range(200):
        X, y = small_dataset(rng)
        mc = int(rng.integers(1, max(2, min(4, len(y) // 2 + 1))))
        lam = float(rng.choice([0.0, 1.0]))
        stump = GbdtHyperparams(num_leaves=2, min_child_samples=mc, learning_rate=1.0, num_boost_round=1,
                                lambda_l2=lam)
        model = fit_gbdt(X, y, stump)
        expected = oracles.best_root_split(X, y, mc, lam)
        if expected is None:
            split_ok += model.trees == []
        else:
            t = model.trees[0]
            split_ok += (t.feature[0] == expected[0] and abs(t.threshold[0] - expected[1]) <= 1e-12)
        hp = GbdtHyperparams(num_leaves=int(rng.integers(2, 6)), min_child_samples=mc,
                             learning_rate=float(rng.uniform(0.05, 1.0)), num_boost_round=100, lambda_l2=lam)
        boosted = fit_gbdt(X, y, hp)
        mse = list(boosted.train_mse)
        final = float(np.mean((boosted.predict(X) - y) ** 2))
        mono_ok += (all(b <= a * (1 + 1e-12) + 1e-15 for a, b in zip(mse, mse[1:]))
                    and abs(final - mse[-1]) <= 1e-9 * max(1.0, mse[-1]))
    verdict(3, "GBDT soundness", split_ok == 200 and mono_ok == 200,
            f"root split {split_ok}/200, monotone MSE {mono_ok}/200")


# ---- 4. linear solver ---------------------------------------------------------


def test_04_ridge_normal_equations():
    rng = np.random.default_rng(404)
    worst = 0.0
    for i in range(100):
        n, d = int(rng.integers(1, 201)), int(rng.integers(1, 21))
        X = rng.normal(size=(n, d)) * rng.uniform(0.1, 10, size=d)
        y = X @ rng.normal(size=d) + rng.normal(size=n)
        lam = (0.0, 0.1, 10.0)[i % 3]
        m = fit_linear(X, y, Regularization.ridge(lam) if lam else None)
        # the intercept is unpenalized, so the equations hold on centred data
        Xc, yc = X - X.mean(axis=0), y - y.mean()
        res = np.abs((Xc.T @ Xc + lam * np.eye(d)) @ m.weights - Xc.T @ yc).max()
        worst = max(worst, float(res))
    verdict(4, "ridge normal equations", worst <= 1e-6, f"max residual {worst:.2e} over 100 instances")


# ---- 5. end-to-end signal recovery -------------------------------------------

SIGMA = 1.0


def signal_fixture(seed):
    return SynthConfig(seed=seed, n_series=10, n_steps=1000, period="H", noise_sigma=SIGMA,
                       covariate_signal_weight=1.0, seasonal_amplitude_range=(2.0, 10.0),
                       n_cont_covariates=2, n_cat_covariates=1, budget_seconds=20.0)


def test_05_signal_recovery():
    passed, lines, slowest = 0, [], 0.0
    for seed in range(10):
        table, _ = generate(signal_fixture(seed))
        t0 = time.perf_counter()
        run = run_streaming_evaluation(table, RunConfig(seed=seed))
        wall = time.perf_counter() - t0
        slowest = max(slowest, wall)
        last = run_streaming_evaluation(table, RunConfig(seed=seed), lambda s: LastValuePipeline()).report.rmse
        mean = run_streaming_evaluation(table, RunConfig(seed=seed), lambda s: GlobalMeanPipeline()).report.rmse
        r = run.report.rmse
        ok = r <= 1.5 * SIGMA and r <= 0.7 * last and r <= 0.7 * mean and wall < 60
        passed += ok
        lines.append(f"{r:.3f}/{last:.3f}/{mean:.3f}")
    verdict(5, "signal recovery", passed >= 8,
            f"{passed}/10 seeds, rmse/last/mean {' '.join(lines)}, slowest {slowest:.1f}s")


# ---- 6. update benefit under drift -------------------------------------------


def drift_fixture(seed):
    return SynthConfig(seed=seed, n_series=5, n_steps=600, noise_sigma=1.0, n_cont_covariates=2,
                       covariate_signal_weight=1.0, drift_at=540, drift_magnitude=3.0, budget_seconds=30.0)


def test_06_update_benefit():
    ratios = []
    for seed in range(10):
        table, _ = generate(drift_fixture(seed))
        updated = run_streaming_evaluation(table, RunConfig(seed=seed))
        frozen = run_streaming_evaluation(table, RunConfig(seed=seed, pipeline=PipelineConfig(strategy="never")))
        assert frozen.update_count == 0
        ratios.append(updated.report.rmse / frozen.report.rmse)
    passed = sum(r <= 0.9 for r in ratios)
    verdict(6, "update benefit", passed >= 8,
            f"{passed}/10 seeds, ratios {' '.join(f'{r:.3f}' for r in ratios)}")


# ---- 7. budget law ------------------------------------------------------------


@pytest.fixture(scope="module")
def smoke_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    write_dataset(SynthConfig.from_json(bundled("smoke.json")), out / "data")
    return out


def test_07_budget_law(smoke_dir):
    table, doc = load_dataset(smoke_dir / "data")
    split = pd.Timestamp(doc["split_instant"])
    rmses = {1.0: [], 2.0: []}
    clean_ok, doubled_clean = True, True
    for seed in range(5):
        for mult in (1.0, 2.0):
            res = run_streaming_evaluation(table, RunConfig(budget_multiplier=mult, seed=seed, split_instant=split))
            if res.budget_violation is None:
                clean_ok &= res.consumed_seconds <= res.budget_seconds
            if mult == 2.0:
                doubled_clean &= not res.disqualified
            rmses[mult].append(res.report.rmse)
    one, two = float(np.median(rmses[1.0])), float(np.median(rmses[2.0]))
    rel = abs(two - one) / one
    verdict(7, "budget law", clean_ok and doubled_clean and rel <= 0.05,
            f"clean runs within budget: {clean_ok}, 2x clean: {doubled_clean}, "
            f"median rmse 1x {one:.4f} 2x {two:.4f}, relative change {rel:.4f}")


# ---- 8. causality -------------------------------------------------------------


def mutate_after(table, t_star, rng):
    """Targets at and after ``t_star`` and covariates after it get new values."""
    frame = table.frame.copy()
    ts = table.timestamps
    s = table.schema
    at_or_after = ts >= t_star
    y = frame[s.target_col].to_numpy(float)
    frame[s.target_col] = np.where(at_or_after & ~np.isnan(y), y + rng.normal(0, 50, len(y)), y)
    after = ts > t_star
    for c in s.continuous_cols:
        x = frame[c].to_numpy(float)
        frame[c] = np.where(after & ~np.isnan(x), rng.normal(0, 50, len(x)), x)
    for c in s.categorical_cols:
        vals = frame[c].to_numpy(object).copy()
        vals[after] = rng.permutation(vals[after])
        frame[c] = vals
    return type(table)(s, frame)


def test_08_causality():
    rng = np.random.default_rng(808)
    feature_changes = prediction_changes = guard_failures = compared = 0
    for i in range(50):
        # feature plan: rows up to t* must not move when later data changes
        table = random_table(int(rng.integers(0, 1 << 30)))
        stamps = np.unique(table.timestamps)
        t_star = stamps[int(rng.integers(0, len(stamps)))]
        plan = FeaturePlan.fit(table, OPTS).with_interactions(["x"])
        before = plan.transform(table)
        after = plan.transform(mutate_after(table, t_star, rng))
        keep = table.timestamps <= t_star
        feature_changes += not (same(before.values[keep], after.values[keep])
                                and same(before.anchor[keep], after.anchor[keep]))

        # harness: predictions up to t* must not move, and the guard must hold
        data, _ = generate(SynthConfig(seed=i, n_series=2, n_steps=int(rng.integers(30, 61)), noise_sigma=0.5,
                                       missing_rate=0.05, n_cont_covariates=1, n_cat_covariates=1,
                                       budget_seconds=30.0))
        stamps = np.unique(data.timestamps)
        n_test = len(stamps) - int(math.ceil(0.8 * len(stamps)))
        t_star = stamps[len(stamps) - 1 - int(rng.integers(0, max(1, n_test)))]
        rc = RunConfig(pipeline=PipelineConfig.baseline(), seed=i)
        a = run_streaming_evaluation(data, rc)
        b = run_streaming_evaluation(mutate_after(data, t_star, rng), rc)
        early_a = a.log.to_frame()
        early_b = b.log.to_frame()
        cut_a = early_a[pd.to_datetime(early_a["timestamp"]) <= t_star]
        cut_b = early_b[pd.to_datetime(early_b["timestamp"]) <= t_star]
        prediction_changes += not np.array_equal(cut_a["yhat"].to_numpy(), cut_b["yhat"].to_numpy())
        compared += len(cut_a)

        spy = Spy(data)
        run_streaming_evaluation(data, RunConfig(), lambda seed: spy)
        guard_failures += not all(np.isnan(s["current_targets"]).all() and s["future_in_history"] == 0
                                  and s["history_rows"] == s["expected_rows"] for s in spy.seen)
    verdict(8, "causality", feature_changes == prediction_changes == guard_failures == 0,
            f"50 pairs: {feature_changes} feature changes, {prediction_changes} prediction changes, "
            f"{guard_failures} guard failures, {compared} predictions compared")


# ---- 9. schedule arithmetic ---------------------------------------------------


def test_09_schedule_arithmetic():
    a = compute_update_schedule(100.0, 8.0, 200, Strategy("budget"), safety_coefficient=0.8)
    b = compute_update_schedule(3.0, 8.0, 57, Strategy("budget"), safety_coefficient=0.8)
    c = compute_update_schedule(100.0, 8.0, 12, Strategy.parse("segments:5"))
    examples = [(a.affordable_rounds, a.update_every) == (10, 20),
                (b.affordable_rounds, b.update_every) == (1, 57),
                c.update_every == 3]
    rng = np.random.default_rng(909)
    covered = 0
    for _ in range(1000):
        n = int(rng.integers(1, 100_000))
        s = compute_update_schedule(float(rng.uniform(0, 1e4)), float(10 ** rng.uniform(-3, 3)), n,
                                    safety_coefficient=float(rng.uniform(0.01, 1)))
        covered += s.update_every * s.affordable_rounds >= n
    verdict(9, "schedule arithmetic", all(examples) and covered == 1000,
            f"{sum(examples)}/3 examples, coverage holds on {covered}/1000")


# ---- 10. ranking and difficulty -----------------------------------------------


def test_10_ranking_and_difficulty():
    rng = np.random.default_rng(1010)
    sums_ok = diff_ok = 0
    for _ in range(500):
        S, D = int(rng.integers(1, 9)), int(rng.integers(1, 7))
        vals = rng.choice([0.5, 1.0, 2.0], size=(S, D)) if rng.random() < 0.3 else rng.random((S, D))
        vals[rng.random((S, D)) < 0.1] = np.nan
        ranks = rank_solutions(pd.DataFrame(vals)).ranks
        sums_ok += bool(np.all(ranks.sum(axis=0).to_numpy() == S * (S + 1) / 2))

        n = int(rng.integers(2, 200))
        y = rng.normal(size=n)
        best = L(y, y + rng.normal(0, rng.uniform(0, 1), n))
        base = L(y, rng.normal(size=n) + rng.uniform(0, 1) * y)
        e = difficulty(best, base)
        cb = oracles.corr(y.tolist(), best.yhat.tolist())
        c0 = oracles.corr(y.tolist(), base.yhat.tolist())
        diff_ok += (e.intrinsic == 1 - abs(corr(best)) and e.modeling == abs(corr(best)) - abs(corr(base))
                    and abs(e.intrinsic - (1 - abs(cb))) <= 1e-12
                    and abs(e.modeling - (abs(cb) - abs(c0))) <= 1e-12)
    a_vals = rng.random((2, 6))
    a_vals[0] = a_vals[1] - 0.1  # A beats B on every dataset
    avg = rank_solutions(pd.DataFrame(a_vals, index=["A", "B"])).average
    dominant = avg["A"] < avg["B"]
    verdict(10, "ranking and difficulty", sums_ok == 500 and diff_ok == 500 and dominant,
            f"rank sums {sums_ok}/500, difficulty {diff_ok}/500, dominant A ranked first: {dominant}")


# ---- 11. determinism ----------------------------------------------------------


def test_11_cli_determinism(smoke_dir):
    args = ["run", "--data", str(smoke_dir / "data"), "--seed", "0"]
    codes = [main(args + ["--out", str(smoke_dir / f"run{k}" / "result.json")]) for k in (1, 2)]
    first = (smoke_dir / "run1" / "result_predictions.csv").read_bytes()
    second = (smoke_dir / "run2" / "result_predictions.csv").read_bytes()
    verdict(11, "determinism", codes == [0, 0] and first == second and len(first) > 0,
            f"exit codes {codes}, prediction CSVs byte-identical: {first == second} ({len(first)} bytes)")
