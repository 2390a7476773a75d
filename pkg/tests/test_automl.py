import dataclasses
import itertools
import math
import time

import numpy as np
import pandas as pd
import pytest
from conftest import make_table
from hypothesis import given, settings
from hypothesis import strategies as st

from autoseries.automl import (
    AutoSeriesPipeline,
    BudgetClock,
    BudgetExhausted,
    DeadlineBeforeFirstEval,
    PipelineConfig,
    SearchSpace,
    Strategy,
    UnfittedPipeline,
    compute_update_schedule,
    ensemble_weights,
    fusion_search,
    pipeline_predict,
    pipeline_train,
    pipeline_update,
    random_search,
)
from autoseries.automl.search import DEFAULT_AXES, DEFAULT_CONFIG, FUSION_GRID
from autoseries.automl.selection import RATIO_ORDER, rank_numeric_features, ratio_masks, select_feature_ratio
from autoseries.features import FeatureOptions, FeaturePlan
from autoseries.models import GbdtHyperparams

# ---- schedule ---------------------------------------------------------------


def test_schedule_examples():
    s = compute_update_schedule(100.0, 8.0, 200, Strategy("budget"), safety_coefficient=0.8)
    assert (s.affordable_rounds, s.update_every) == (10, 20)
    s = compute_update_schedule(3.0, 8.0, 57, Strategy("budget"), safety_coefficient=0.8)
    assert (s.affordable_rounds, s.update_every) == (1, 57)
    s = compute_update_schedule(100.0, 8.0, 12, Strategy.parse("segments:5"))
    assert s.update_every == 3
    never = compute_update_schedule(100.0, 8.0, 12, Strategy.parse("never"))
    assert not any(never.should_update(k) for k in range(1, 13))


@settings(max_examples=300)
@given(st.floats(0, 1e5), st.floats(1e-3, 1e3), st.integers(1, 100_000), st.floats(0.01, 1.0))
def test_schedule_coverage_and_soundness(remaining, first, n, safety):
    s = compute_update_schedule(remaining, first, n, safety_coefficient=safety)
    assert s.update_every >= 1 and s.affordable_rounds >= 1
    assert s.update_every * s.affordable_rounds >= n
    assert s.affordable_rounds * first <= remaining * safety * (1 + 1e-9) + first


def test_schedule_from_clock():
    clock = BudgetClock(100.0, 0.5)
    clock.charge(20.0)
    s = compute_update_schedule(clock, 4.0, 100)
    assert s.affordable_rounds == 10 and s.update_every == 10


def test_clock_running_charge():
    clock = BudgetClock(10.0)
    clock.begin()
    time.sleep(0.02)
    assert clock.consumed_seconds >= 0.02
    dt = clock.end()
    assert clock.consumed_seconds == pytest.approx(dt)
    clock.charge(20)
    assert clock.exhausted and clock.overrun == pytest.approx(10 + dt)
    with pytest.raises(RuntimeError):
        clock.end()
    with pytest.raises(ValueError):
        BudgetClock(1.0, safety_coefficient=0)


# ---- search -----------------------------------------------------------------


def test_default_space_cardinality():
    space = SearchSpace()
    assert space.cardinality == 2880
    assert math.prod(len(v) for v in DEFAULT_AXES.values()) == 2880
    assert next(space.sequence(0)) == space.default == DEFAULT_CONFIG
    flat = [space.index_of(c) for c in itertools.islice(space.sequence(3), 2880)]
    assert sorted(flat) == list(range(2880))


def toy_space():
    return SearchSpace({"a": (1, 2), "b": (10, 20)}, {"a": 2, "b": 10})


def toy_score(c):
    return {(1, 10): 3.0, (1, 20): 0.5, (2, 10): 2.0, (2, 20): 0.5}[(c["a"], c["b"])]


def test_random_search_exhaustive_argmin():
    res = random_search(toy_space(), toy_score, seed=5)
    scores = [toy_score(c) for c in (dict(a=a, b=b) for a in (1, 2) for b in (10, 20))]
    assert res.best_score == min(scores) and res.n_evals == 4
    # the tie between two configs keeps whichever was evaluated first
    first_min = next(c for c, s, _ in res.history if s == 0.5)
    assert res.best_config == first_min


@settings(max_examples=50)
@given(st.integers(0, 1000), st.lists(st.floats(0, 10), min_size=6, max_size=6))
def test_random_search_matches_brute_force(seed, values):
    space = SearchSpace({"a": (0, 1, 2), "b": ("x", "y")})
    table = dict(zip(itertools.product((0, 1, 2), ("x", "y")), values))
    res = random_search(space, lambda c: table[(c["a"], c["b"])], seed=seed)
    assert res.best_score == min(values)


def test_random_search_budget_and_determinism():
    one = random_search(SearchSpace(), lambda c: 1.0, max_evals=1)
    assert one.best_config == DEFAULT_CONFIG

    def slow(c):
        time.sleep(0.01)
        return c["num_leaves"]

    res = random_search(SearchSpace(), slow, deadline=time.perf_counter() + 0.001)
    assert res.n_evals == 1 and res.best_config == DEFAULT_CONFIG
    a = [c for c, _, _ in random_search(SearchSpace(), lambda c: 0.0, seed=9, max_evals=20).history]
    b = [c for c, _, _ in random_search(SearchSpace(), lambda c: 0.0, seed=9, max_evals=20).history]
    assert a == b
    with pytest.raises(DeadlineBeforeFirstEval):
        random_search(SearchSpace(), slow, deadline=time.perf_counter() - 1)


def test_ensemble_weight_examples():
    assert np.allclose(ensemble_weights([2, 4]), [2 / 3, 1 / 3])
    assert np.allclose(ensemble_weights([3, 3, 3]), [1 / 3] * 3)
    assert ensemble_weights([0.7]).tolist() == [1.0]
    assert ensemble_weights([0.0, 2.0]).tolist() == [1.0, 0.0]


@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=8))
def test_ensemble_weight_properties(rmses):
    w = ensemble_weights(rmses)
    assert (w >= 0).all() and abs(w.sum() - 1) <= 1e-12
    for i, j in itertools.combinations(range(len(rmses)), 2):
        if rmses[i] < rmses[j]:
            assert w[i] >= w[j]


def test_fusion_examples():
    rng = np.random.default_rng(0)
    y = rng.normal(size=50)
    assert fusion_search(y + 3, y, y) == 1.0
    assert fusion_search(y, y + 10, y) == 0.0
    lin, gb = y - 1, y + 1
    brute = min(FUSION_GRID, key=lambda a: np.sqrt(np.mean((a * gb + (1 - a) * lin - y) ** 2)))
    assert fusion_search(lin, gb, y) == 0.5 == brute
    assert fusion_search(y, y, y) == 1.0  # full tie goes to the booster


# ---- selection --------------------------------------------------------------


def test_ratio_masks_dedup():
    masks = ratio_masks([0.5, 1.0])
    # sizes ceil(0.2*2)=1, ceil(0.5*2)=1, ceil(0.75*2)=2, ...; each size is fit once
    assert masks == [(0.2, [1]), (0.75, [0, 1])]
    assert [r for r, _ in ratio_masks(np.arange(20.0))] == list(RATIO_ORDER)
    assert [len(c) for _, c in ratio_masks(np.arange(20.0))] == [4, 10, 15, 1, 2]


def test_identical_features_pick_first_ratio():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(120, 1))
    X = np.repeat(x, 10, axis=1)
    y = 2 * x[:, 0] + rng.normal(size=120) * 0.1
    hp = GbdtHyperparams(num_leaves=7, min_child_samples=5, num_boost_round=30)
    _, ratio, results = select_feature_ratio(X[:90], y[:90], X[90:], y[90:], np.ones(10), hp)
    assert ratio == 0.2 and len(set(results.values())) == 1


def test_single_informative_feature():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, 20))
    y = 4 * X[:, 7] + 0.05 * rng.normal(size=300)
    hp = GbdtHyperparams(num_leaves=7, min_child_samples=5, num_boost_round=60)
    from autoseries.models import fit_gbdt

    gain = fit_gbdt(X[:220], y[:220], hp).feature_importance().gain
    _, ratio, results = select_feature_ratio(X[:220], y[:220], X[220:], y[220:], gain, hp)
    assert results[0.05] <= min(results.values()) + 1e-12


def series_table(n_steps=60, n_series=2, seed=0, noise=0.0, conts=("x0", "x1"), fn=None):
    rng = np.random.default_rng(seed)
    rows = []
    for t in range(n_steps):
        for s in range(n_series):
            xs = {c: float(rng.normal()) for c in conts}
            y = fn(xs, t, s) if fn else 5 * xs[conts[0]] + s + noise * rng.normal()
            rows.append({"timestamp": pd.Timestamp("2020-01-01") + pd.Timedelta(hours=t), "k": f"s{s}", **xs, "y": y})
    return make_table(rows, conts=conts)


def test_rank_numeric_features():
    t = series_table(200, conts=("x0", "x1", "x2", "x3"))
    plan = FeaturePlan.fit(t, FeatureOptions.preset("baseline"))
    m = plan.transform(t)
    top = rank_numeric_features(m, m.target, ["x0", "x1", "x2", "x3"])
    assert top[0] == "x0" and len(top) == 3
    assert rank_numeric_features(m, m.target, ["x2"]) == ["x2"]
    assert rank_numeric_features(m, m.target, []) == []


# ---- pipeline ---------------------------------------------------------------


def test_pipeline_smoke_small_table():
    t = series_table(25, noise=0.5)
    assert len(t) == 50
    tp = pipeline_train(t, BudgetClock(30.0), PipelineConfig(), n_test_steps=5)
    assert tp.search_evals >= 1
    assert abs(tp.weights.sum() - 1) <= 1e-12 and (tp.weights >= 0).all()
    doc = tp.to_dict()
    assert "feature_importance" in doc and doc["schedule"]["update_every"] >= 1
    tp.to_json()


def test_noiseless_linear_target():
    t = series_table(200, fn=lambda xs, t, s: 3 * xs["x0"] - 2 * xs["x1"] + 5)
    tp = pipeline_train(t, BudgetClock(60.0), PipelineConfig(), n_test_steps=10)
    assert min(tp.member_rmse.values()) < 1e-3 * np.std(t.target)
    assert tp.weights[1] == 1.0


def test_default_only_budget_equals_default_config():
    t = series_table(80, noise=0.3, seed=4)
    future = series_table(81, noise=0.3, seed=4).frame.iloc[-2:]
    rows = type(t)(t.schema, future.reset_index(drop=True))
    one = pipeline_train(t, BudgetClock(60.0), PipelineConfig(max_search_evals=1), 5)
    pinned = {k: (v,) for k, v in DEFAULT_CONFIG.items()}
    grid = pipeline_train(t, BudgetClock(60.0), PipelineConfig(search_space=pinned), 5)
    assert one.hyperparams == grid.hyperparams
    assert np.array_equal(pipeline_predict(one, rows, t), pipeline_predict(grid, rows, t))


def test_predict_contract():
    t = series_table(60, noise=0.3, seed=5)
    full = series_table(61, noise=0.3, seed=5)
    rows = type(t)(t.schema, full.frame.iloc[-2:].reset_index(drop=True))
    tp = pipeline_train(t, BudgetClock(60.0), PipelineConfig(), 5)
    a = pipeline_predict(tp, rows, t)
    assert np.array_equal(a, pipeline_predict(tp, rows, t))
    guessed = rows.frame.copy()
    guessed["y"] = [1e6, -1e6]  # a speculative value of y_t must not matter
    assert np.array_equal(a, pipeline_predict(tp, type(t)(t.schema, guessed), t))
    with pytest.raises(UnfittedPipeline):
        pipeline_predict(None, rows, t)


def test_zero_round_booster_predicts_train_mean():
    t = series_table(40, fn=lambda xs, t, s: 7.0)
    cfg = PipelineConfig(enable_linear_member=False, num_boost_round=0, feature_selection=False)
    tp = pipeline_train(t, BudgetClock(30.0), cfg, 3)
    rows = type(t)(t.schema, series_table(41, fn=lambda xs, t, s: 7.0).frame.iloc[-2:].reset_index(drop=True))
    assert np.allclose(pipeline_predict(tp, rows, t), 7.0)


def test_update_without_new_rows_is_identity():
    t = series_table(60, noise=0.3, seed=6)
    rows = type(t)(t.schema, series_table(61, noise=0.3, seed=6).frame.iloc[-2:].reset_index(drop=True))
    tp = pipeline_train(t, BudgetClock(60.0), PipelineConfig(), 5)
    up = pipeline_update(tp, t, BudgetClock(60.0))
    assert up.update_count == 1
    assert np.array_equal(pipeline_predict(tp, rows, t), pipeline_predict(up, rows, t))


def test_update_on_exhausted_clock():
    t = series_table(30, noise=0.3)
    tp = pipeline_train(t, BudgetClock(60.0), PipelineConfig.baseline(), 5)
    clock = BudgetClock(1.0)
    clock.charge(2.0)
    with pytest.raises(BudgetExhausted):
        pipeline_update(tp, t, clock)
    with pytest.raises(UnfittedPipeline):
        AutoSeriesPipeline().schedule
    # 1.5s left of 10s: a 1s refit would enter the 2s reserve kept for predicts
    slow = dataclasses.replace(tp, first_train_seconds=1.0)
    reserve = BudgetClock(10.0, 0.8)
    reserve.charge(8.5)
    with pytest.raises(BudgetExhausted):
        pipeline_update(slow, t, reserve)
    roomy = BudgetClock(10.0, 0.8)
    roomy.charge(6.0)
    assert pipeline_update(slow, t, roomy).last_refit_seconds > 0


def test_differencing_axis_and_config_json(tmp_path):
    t = series_table(60, noise=0.3, seed=7)
    tp = pipeline_train(t, BudgetClock(60.0), PipelineConfig(enable_target_differencing=True, max_search_evals=6), 5)
    assert tp.search_evals == 6
    cfg = PipelineConfig(seed=3, strategy="segments:4")
    p = tmp_path / "c.json"
    p.write_text(__import__("json").dumps(cfg.to_dict()))
    assert PipelineConfig.from_json(p) == cfg
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        PipelineConfig(strategy="sometimes")
