"""Streaming evaluation: train once, then predict, reveal and update step by step.

Every pipeline call runs under one wall clock covering train, update and
predict. The clock is checked before each train/update call and after each
predict; an overrun is measured and flagged, never interrupted.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .automl import AutoSeriesPipeline, BudgetClock, BudgetExhausted, PipelineConfig
from .dataset import LongTable, sort_by_time, split_by_fraction, split_train_test
from .metrics import MetricReport, PredictionLog, evaluate


class PipelinePanic(RuntimeError):
    def __init__(self, step: int, error: BaseException):
        super().__init__(f"pipeline raised at step {step}: {error!r}")
        self.step = step
        self.error = error


@dataclass(frozen=True)
class RunConfig:
    budget_multiplier: float = 1.0
    seed: int = 0
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    split_instant: object = None  # None: split at 80% of the time axis
    train_fraction: float = 0.8

    def __post_init__(self):
        if not self.budget_multiplier > 0:
            raise ValueError("budget_multiplier must be positive")


@dataclass
class RunResult:
    log: PredictionLog
    report: MetricReport | None
    train_seconds: float
    total_update_seconds: float
    total_predict_seconds: float
    update_count: int
    budget_seconds: float
    consumed_seconds: float
    budget_violation: float | None
    seed: int
    wall_seconds: float
    n_test_steps: int
    panic: dict | None = None
    pipeline_summary: dict = field(default_factory=dict)
    dataset: str = ""

    @property
    def disqualified(self) -> bool:
        return self.budget_violation is not None or self.panic is not None

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "seed": self.seed,
            "metrics": None if self.report is None else self.report.to_dict(),
            "durations": {
                "train_seconds": self.train_seconds,
                "total_update_seconds": self.total_update_seconds,
                "total_predict_seconds": self.total_predict_seconds,
                "wall_seconds": self.wall_seconds,
            },
            "update_count": self.update_count,
            "n_test_steps": self.n_test_steps,
            "n_predictions": len(self.log),
            "budget_seconds": self.budget_seconds,
            "consumed_seconds": self.consumed_seconds,
            "budget_violation": self.budget_violation,
            "disqualified": self.disqualified,
            "panic": self.panic,
            "pipeline": self.pipeline_summary,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


class StreamCursor:
    """Test steps in time order plus the buffer of revealed history."""

    def __init__(self, train: LongTable, steps: list):
        self.steps = steps
        self.next_index = 0
        self._parts = [train.frame]
        self._schema = train.schema
        self._cache: LongTable | None = None

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def done(self) -> bool:
        return self.next_index >= len(self.steps)

    def current(self) -> tuple:
        return self.steps[self.next_index]

    def history(self) -> LongTable:
        """Training rows plus every revealed step, as a fresh table."""
        if self._cache is None:
            frame = pd.concat(self._parts, ignore_index=True) if len(self._parts) > 1 else self._parts[0]
            self._parts = [frame]
            self._cache = LongTable(self._schema, frame)
        return LongTable(self._schema, self._cache.frame.copy(deep=False))

    def reveal(self) -> None:
        _, rows = self.steps[self.next_index]
        self._parts.append(rows.frame)
        self._cache = None
        self.next_index += 1


def masked(rows: LongTable) -> LongTable:
    frame = rows.frame.copy()
    frame[rows.schema.target_col] = np.nan
    return LongTable(rows.schema, frame)


def _series_index(table: LongTable) -> dict:
    index = {}
    for key in table.series_keys():
        if key not in index:
            index[key] = len(index) + 1
    return index


def _key_label(key) -> str:
    return "|".join("" if k is None else str(k) for k in key)


def run_streaming_evaluation(table: LongTable, run_config: RunConfig | None = None, pipeline_factory=None,
                             dataset_name: str = "") -> RunResult:
    """Train, then walk the test steps: predict, reveal, maybe update."""
    rc = run_config or RunConfig()
    if pipeline_factory is None:
        pipeline_factory = lambda seed: AutoSeriesPipeline(_with_seed(rc.pipeline, seed))  # noqa: E731
    wall0 = time.perf_counter()
    table = sort_by_time(table)
    split = rc.split_instant if rc.split_instant is not None else split_by_fraction(table, rc.train_fraction)
    train, steps = split_train_test(table, split)
    steps = [(t, rows) for t, rows in steps if len(rows)]
    budget = table.schema.budget_seconds * rc.budget_multiplier
    clock = BudgetClock(budget, rc.pipeline.safety_coefficient)
    series_of = _series_index(table)
    pipeline = pipeline_factory(rc.seed)

    log_parts = []
    train_s = update_s = predict_s = 0.0
    updates = 0
    panic = None
    cursor = StreamCursor(train, steps)

    clock.begin()
    try:
        pipeline.train(train, clock, len(steps))
    except Exception as exc:  # any failure in participant code aborts the run
        panic = {"step": 0, "error": repr(exc)}
    train_s = clock.end()

    step = 0
    while panic is None and not cursor.done:
        step = cursor.next_index + 1
        stamp, rows = cursor.current()
        history = cursor.history()
        clock.begin()
        try:
            preds = np.asarray(pipeline.predict(masked(rows), history), dtype=float)
        except Exception as exc:
            clock.end()
            panic = {"step": step, "error": repr(exc)}
            break
        predict_s += clock.end()
        if preds.shape != (len(rows),) or not np.isfinite(preds).all():
            panic = {"step": step, "error": "predictions are not one finite value per row"}
            break
        y = rows.target
        keys = rows.series_keys()
        ok = ~np.isnan(y)
        log_parts.append(pd.DataFrame({
            "series": [series_of[k] for k in keys],
            "key": [_key_label(k) for k in keys],
            "time": step,
            "timestamp": rows.timestamps,
            "y": y,
            "yhat": preds,
        })[ok])
        cursor.reveal()
        if step < len(steps) and pipeline.schedule.should_update(step):
            if clock.exhausted:
                continue  # no budget left: keep serving the last fitted state
            clock.begin()
            try:
                pipeline.update(cursor.history(), clock)
                updates += 1
            except BudgetExhausted:
                pass
            except Exception as exc:
                clock.end()
                panic = {"step": step, "error": repr(exc)}
                break
            update_s += clock.end()

    log_frame = pd.concat(log_parts, ignore_index=True) if log_parts else pd.DataFrame(
        {"series": [], "key": [], "time": [], "timestamp": [], "y": [], "yhat": []}
    )
    log = PredictionLog(
        log_frame["series"].to_numpy(np.int64), log_frame["time"].to_numpy(np.int64),
        log_frame["y"].to_numpy(float), log_frame["yhat"].to_numpy(float),
        log_frame["key"].tolist(), log_frame["timestamp"].to_numpy(),
    )
    report = evaluate(log) if len(log) and panic is None else None
    violation = clock.overrun if clock.consumed_seconds > budget else None
    summary = {}
    state = getattr(pipeline, "state", None)
    if state is not None:
        summary = {
            "schedule": state.schedule.to_dict(),
            "search_evals": state.search_evals,
            "first_train_seconds": state.first_train_seconds,
            "weights": state.weights.tolist(),
            "member_rmse": state.member_rmse,
            "feature_ratio": state.feature_ratio,
            "n_features": len(state.gbdt.feature_names),
            "n_trees": len(state.gbdt.trees),
        }
    return RunResult(
        log=log,
        report=report,
        train_seconds=train_s,
        total_update_seconds=update_s,
        total_predict_seconds=predict_s,
        update_count=updates,
        budget_seconds=budget,
        consumed_seconds=clock.consumed_seconds,
        budget_violation=violation,
        seed=rc.seed,
        wall_seconds=time.perf_counter() - wall0,
        n_test_steps=len(steps),
        panic=panic,
        pipeline_summary=summary,
        dataset=dataset_name,
    )


def _with_seed(cfg: PipelineConfig, seed: int) -> PipelineConfig:
    return PipelineConfig.from_dict({**cfg.to_dict(), "seed": seed})


def repeat_runs(table: LongTable, run_config: RunConfig, n_seeds: int, pipeline_factory=None,
                dataset_name: str = "", threads: int = 0) -> list:
    """One run per seed ``run_config.seed + i``; results in seed order."""
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    configs = [dataclasses.replace(run_config, seed=run_config.seed + i) for i in range(n_seeds)]
    if threads and threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(run_streaming_evaluation, table, c, pipeline_factory, dataset_name)
                       for c in configs]
            return [f.result() for f in futures]
    return [run_streaming_evaluation(table, c, pipeline_factory, dataset_name) for c in configs]


def durations_table(results: dict) -> pd.DataFrame:
    """Seconds per dataset and solution: ``results[(dataset, solution)] -> RunResult``.

    Columns are dataset, budget, then one column per solution holding the
    total measured seconds (train + update + predict).
    """
    datasets = sorted({d for d, _ in results})
    solutions = sorted({s for _, s in results})
    rows = []
    for d in datasets:
        row = {"dataset": d}
        budgets = [r.budget_seconds for (dd, _), r in results.items() if dd == d]
        row["budget"] = budgets[0] if budgets else np.nan
        for s in solutions:
            r = results.get((d, s))
            row[s] = np.nan if r is None else r.train_seconds + r.total_update_seconds + r.total_predict_seconds
        rows.append(row)
    return pd.DataFrame(rows, columns=["dataset", "budget", *solutions])


class _Reference:
    """Reference predictors share a schedule that never updates."""

    def __init__(self):
        from .automl import Strategy, UpdateSchedule

        self.schedule = UpdateSchedule(1 << 62, 1, Strategy("never"))

    def train(self, train: LongTable, clock, n_test_steps: int) -> None:
        pass

    def update(self, history: LongTable, clock) -> None:
        pass


class LastValuePipeline(_Reference):
    """Predicts the last revealed target of each series (training mean if none)."""

    def train(self, train, clock, n_test_steps):
        self.fallback = float(np.nanmean(train.target))

    def predict(self, rows: LongTable, history: LongTable) -> np.ndarray:
        frame = history.frame
        y = frame[history.schema.target_col]
        keys = list(history.schema.key_cols)
        observed = frame[~y.isna()]
        if keys:
            last = observed.groupby(keys, sort=False, dropna=False)[history.schema.target_col].last()
            lookup = dict(zip(last.index if len(keys) > 1 else [(k,) for k in last.index], last.to_numpy()))
        else:
            lookup = {(): observed[history.schema.target_col].iloc[-1]} if len(observed) else {}
        return np.array([lookup.get(k, self.fallback) for k in rows.series_keys()], dtype=float)


class GlobalMeanPipeline(_Reference):
    """Predicts the mean training target everywhere."""

    def train(self, train, clock, n_test_steps):
        self.mean = float(np.nanmean(train.target))

    def predict(self, rows: LongTable, history: LongTable) -> np.ndarray:
        return np.full(len(rows), self.mean)


class OraclePipeline(_Reference):
    """Predicts known values per (series key, timestamp), e.g. the noiseless truth."""

    def __init__(self, truth: dict):
        super().__init__()
        self.truth = truth

    def predict(self, rows: LongTable, history: LongTable) -> np.ndarray:
        stamps = [pd.Timestamp(t) for t in rows.timestamps]
        return np.array([self.truth[(k, t)] for k, t in zip(rows.series_keys(), stamps)], dtype=float)
