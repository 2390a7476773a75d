"""The train / predict / update pipeline driven by the streaming harness.

Training runs: fit the feature plan on the chronological head of the
training rows, rank covariates with a small booster, add pairwise
interactions of the top three, pick the kept-feature ratio, random-search
booster hyperparameters on the chronological tail, then refit everything on
all training rows with the winning configuration. Updates refit the plan and
the members on train plus revealed rows, reusing the searched settings.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from ..dataset import LongTable, concat, sort_by_time
from ..features.plan import FeatureMatrix, FeatureOptions, FeaturePlan
from ..models import GbdtHyperparams, GbdtModel, LinearModel, Regularization, fit_gbdt, fit_linear
from .schedule import BudgetClock, BudgetExhausted, Strategy, UpdateSchedule, compute_update_schedule
from .search import SearchSpace, ensemble_weights, fusion_search, random_search
from .selection import rank_numeric_features, select_feature_ratio


class UnfittedPipeline(RuntimeError):
    pass


DIFF_AXIS = "target_differencing"


@dataclass(frozen=True)
class PipelineConfig:
    strategy: str = "budget"
    safety_coefficient: float = 0.8
    search_space: dict = field(default_factory=dict)  # axis overrides
    seed: int = 0
    enable_linear_member: bool = True
    enable_target_differencing: bool = False
    preset: str = "full"  # "full" | "baseline"
    ensemble_method: str = "fusion"  # "fusion" | "inverse_rmse"
    linear_init_score: bool = False
    linear_lambda: float = 1e-3
    interactions: bool = True
    feature_selection: bool = True
    search_time_fraction: float = 0.3
    max_search_evals: int | None = 30
    learning_rate: float = 0.1
    num_boost_round: int = 100
    validation_fraction: float = 0.2

    def __post_init__(self):
        Strategy.parse(self.strategy)
        FeatureOptions.preset(self.preset)
        if self.ensemble_method not in ("fusion", "inverse_rmse"):
            raise ValueError(f"unknown ensemble_method {self.ensemble_method!r}")
        if not 0 < self.search_time_fraction <= 1:
            raise ValueError("search_time_fraction must be in (0, 1]")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.max_search_evals is not None and self.max_search_evals < 1:
            raise ValueError("max_search_evals must be >= 1")

    @classmethod
    def baseline(cls, **changes) -> "PipelineConfig":
        """Calendar and raw features, one default booster, five update segments."""
        base = dict(
            strategy="segments:5",
            preset="baseline",
            enable_linear_member=False,
            interactions=False,
            feature_selection=False,
            max_search_evals=1,
        )
        base.update(changes)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValueError(f"unknown pipeline config key {unknown[0]!r}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class LinearMember:
    """Ridge on mean-filled, range-clipped features."""

    fill: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    model: LinearModel

    @classmethod
    def fit(cls, X, y, lam: float) -> "LinearMember":
        with np.errstate(all="ignore"):
            fill = np.nan_to_num(np.nanmean(np.where(np.isfinite(X), X, np.nan), axis=0), nan=0.0)
        Xf = cls._fill(X, fill)
        lo, hi = Xf.min(axis=0), Xf.max(axis=0)
        return cls(fill, lo, hi, fit_linear(Xf, y, Regularization.ridge(lam)))

    @staticmethod
    def _fill(X, fill):
        return np.where(np.isfinite(X), X, fill)

    def predict(self, X) -> np.ndarray:
        return self.model.predict(np.clip(self._fill(X, self.fill), self.lo, self.hi))

    def to_dict(self) -> dict:
        return {"fill": self.fill.tolist(), "lo": self.lo.tolist(), "hi": self.hi.tolist(), **self.model.to_dict()}


@dataclass
class TrainedPipeline:
    config: PipelineConfig
    plan: FeaturePlan
    gbdt: GbdtModel
    linear: LinearMember | None
    weights: np.ndarray  # [gbdt, linear] or [gbdt]
    member_rmse: dict
    hyperparams: GbdtHyperparams
    differencing: bool
    schedule: UpdateSchedule
    seed: int
    feature_ratio: float | None = None
    search_evals: int = 0
    first_train_seconds: float = 0.0
    update_count: int = 0
    last_refit_seconds: float = 0.0

    def to_dict(self) -> dict:
        imp = self.gbdt.feature_importance()
        return {
            "config": self.config.to_dict(),
            "seed": self.seed,
            "hyperparams": asdict(self.hyperparams),
            "target_differencing": self.differencing,
            "weights": self.weights.tolist(),
            "member_rmse": self.member_rmse,
            "feature_ratio": self.feature_ratio,
            "search_evals": self.search_evals,
            "first_train_seconds": self.first_train_seconds,
            "update_count": self.update_count,
            "last_refit_seconds": self.last_refit_seconds,
            "schedule": self.schedule.to_dict(),
            "feature_importance": imp.to_dict(),
            "feature_plan": self.plan.to_dict(),
            "gbdt": self.gbdt.to_dict(),
            "linear": None if self.linear is None else self.linear.to_dict(),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def _rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def validation_cut(times, fraction: float = 0.2):
    """Last timestamp of the chronological head holding ~``1 - fraction`` of the rows.

    Returns None when the table has a single timestamp (no tail to validate on).
    """
    t = np.sort(np.asarray(times).astype("datetime64[ns]"))
    uniq, counts = np.unique(t, return_counts=True)
    if len(uniq) < 2:
        return None
    cum = np.cumsum(counts)
    i = int(np.searchsorted(cum, (1.0 - fraction) * len(t)))
    return uniq[min(max(i, 0), len(uniq) - 2)]


def _labels(m: FeatureMatrix, differencing: bool) -> np.ndarray:
    return m.target - m.anchor if differencing else m.target


def _hp(config: dict, cfg: PipelineConfig, n_rows: int, rounds: int | None = None) -> GbdtHyperparams:
    grid = {k: v for k, v in config.items() if k != DIFF_AXIS}
    grid["min_child_samples"] = max(1, min(int(grid.get("min_child_samples", 20)), n_rows))
    return GbdtHyperparams(
        learning_rate=cfg.learning_rate,
        num_boost_round=cfg.num_boost_round if rounds is None else rounds,
        **grid,
    )


def _member_preds(tp_gbdt, linear, X, anchor, differencing):
    lin = linear.predict(X) if linear is not None else None
    init = lin if (linear is not None and tp_gbdt.per_row_init) else None
    g = tp_gbdt.predict(X, init_score=init)
    if differencing:
        g = g + anchor
        lin = None if lin is None else lin + anchor
    return g, lin


def _combine(weights, g, lin) -> np.ndarray:
    if lin is None:
        return g
    return weights[0] * g + weights[1] * lin


def pipeline_train(train: LongTable, clock: BudgetClock, config: PipelineConfig | None = None,
                   n_test_steps: int = 1) -> TrainedPipeline:
    cfg = config or PipelineConfig()
    if not len(train) or np.isnan(train.target).all():
        raise ValueError("training table has no observed targets")
    t_start = time.perf_counter()
    search_deadline = clock.deadline(cfg.search_time_fraction)
    train = sort_by_time(train)
    options = FeatureOptions.preset(cfg.preset)
    schema = train.schema
    seed = cfg.seed

    # chronological head / tail split for every selection decision
    cut = validation_cut(train.timestamps, cfg.validation_fraction)
    if cut is None:
        head_mask = np.ones(len(train), dtype=bool)
    else:
        head_mask = train.timestamps.astype("datetime64[ns]") <= cut
    head = train.take(np.flatnonzero(head_mask))
    if np.isnan(head.target).all():
        head, head_mask = train, np.ones(len(train), dtype=bool)
    plan = FeaturePlan.fit(head, options)
    m = plan.transform(train)
    y_all = m.target
    tr = head_mask & ~np.isnan(y_all)
    va = ~head_mask & ~np.isnan(y_all)
    if not va.any():
        va = tr

    if cfg.interactions and schema.continuous_cols:
        top = rank_numeric_features(m.take(tr), y_all[tr], schema.continuous_cols, seed=seed)
        if len(top) >= 2:
            plan = plan.with_interactions(top)
            m = plan.transform(train)

    space = SearchSpace().with_overrides(cfg.search_space)
    if cfg.enable_target_differencing:
        space = space.with_overrides({DIFF_AXIS: (False, True)})
    default_hp = _hp(space.default, cfg, int(tr.sum()))
    default_diff = bool(space.default.get(DIFF_AXIS, False))

    linear_cache: dict = {}

    def linear_for(cols, diff):
        key = (tuple(cols), diff)
        if key not in linear_cache:
            X = m.values[:, cols]
            lab = _labels(m, diff)
            linear_cache[key] = LinearMember.fit(X[tr], lab[tr], cfg.linear_lambda)
        return linear_cache[key]

    def inits(cols, diff):
        if not (cfg.enable_linear_member and cfg.linear_init_score):
            return None, None
        lin = linear_for(cols, diff)
        return lin.predict(m.values[tr][:, cols]), lin.predict(m.values[va][:, cols])

    cols = list(range(m.values.shape[1]))
    ratio = None
    if cfg.feature_selection and len(cols) > 1:
        lab = _labels(m, default_diff)
        base = fit_gbdt(m.values[tr], lab[tr], default_hp, seed=seed)
        gain = base.feature_importance().gain
        it, iv = inits(cols, default_diff)
        cols, ratio, _ = select_feature_ratio(
            m.values[tr], lab[tr], m.values[va], lab[va], gain, default_hp, seed=seed,
            init_train=it, init_val=iv,
        )
        plan = plan.with_selection([m.column_names[j] for j in cols])
    Xtr_all, Xva_all = m.values[tr][:, cols], m.values[va][:, cols]

    def evaluate(config):
        diff = bool(config.get(DIFF_AXIS, False))
        lab = _labels(m, diff)
        it, iv = inits(cols, diff)
        hp = _hp(config, cfg, int(tr.sum()))
        model = fit_gbdt(Xtr_all, lab[tr], hp, init_score=it, seed=seed, valid=(Xva_all, lab[va], iv))
        best_iter = int(np.argmin(model.valid_rmse))
        return model.valid_rmse[best_iter], (best_iter, model)

    if time.perf_counter() >= search_deadline:
        result = random_search(space, evaluate, None, seed=seed, max_evals=1)
    else:
        result = random_search(space, evaluate, search_deadline, seed=seed, max_evals=cfg.max_search_evals)
    best_iter, best_model = result.best_info
    differencing = bool(result.best_config.get(DIFF_AXIS, False))
    hp = _hp(result.best_config, cfg, int(tr.sum()), rounds=best_iter)

    # validation predictions of each member decide the ensemble weights
    anchor_va = m.anchor[va]
    it, iv = inits(cols, differencing)
    g_va = best_model.predict(Xva_all, init_score=iv, n_trees=best_iter)
    if differencing:
        g_va = g_va + anchor_va
    member_rmse = {"gbdt": _rmse(g_va, y_all[va])}
    weights = np.array([1.0])
    use_linear = cfg.enable_linear_member
    if use_linear:
        lin_va = linear_for(cols, differencing).predict(Xva_all)
        if differencing:
            lin_va = lin_va + anchor_va
        member_rmse["linear"] = _rmse(lin_va, y_all[va])
        if cfg.ensemble_method == "fusion":
            a = fusion_search(lin_va, g_va, y_all[va])
            weights = np.array([a, 1.0 - a])
        else:
            weights = ensemble_weights([member_rmse["gbdt"], member_rmse["linear"]])

    t_final = time.perf_counter()
    final_plan = plan.refit(train)
    gbdt, linear = _fit_members(final_plan, train, hp, differencing, cfg, use_linear, seed)
    first_train_seconds = max(time.perf_counter() - t_final, 1e-6)

    schedule = compute_update_schedule(
        clock.remaining, first_train_seconds, max(1, n_test_steps), Strategy.parse(cfg.strategy),
        safety_coefficient=clock.safety_coefficient,
    )
    return TrainedPipeline(
        config=cfg,
        plan=final_plan,
        gbdt=gbdt,
        linear=linear,
        weights=weights,
        member_rmse=member_rmse,
        hyperparams=hp,
        differencing=differencing,
        schedule=schedule,
        seed=seed,
        feature_ratio=ratio,
        search_evals=result.n_evals,
        first_train_seconds=first_train_seconds,
    )


def _fit_members(plan: FeaturePlan, table: LongTable, hp: GbdtHyperparams, differencing: bool,
                 cfg: PipelineConfig, use_linear: bool, seed: int):
    m = plan.transform(table)
    lab = _labels(m, differencing)
    ok = ~np.isnan(lab)
    X, y = m.values[ok], lab[ok]
    linear = LinearMember.fit(X, y, cfg.linear_lambda) if use_linear else None
    init = linear.predict(X) if (linear is not None and cfg.linear_init_score) else None
    hp = hp.replace(min_child_samples=max(1, min(hp.min_child_samples, len(y))))
    gbdt = fit_gbdt(X, y, hp, init_score=init, seed=seed, feature_names=m.column_names)
    return gbdt, linear


def history_tail(history: LongTable, rows: int) -> LongTable:
    """Last ``rows`` rows of every series in ``history``."""
    keys = list(history.schema.key_cols)
    frame = history.frame
    if not len(frame):
        return history
    if keys:
        tail = frame.groupby(keys, sort=False, dropna=False).tail(rows)
    else:
        tail = frame.tail(rows)
    return LongTable(history.schema, tail.reset_index(drop=True))


def pipeline_predict(tp: TrainedPipeline | None, rows: LongTable, history: LongTable | None = None) -> np.ndarray:
    """Predictions for ``rows`` (all at one instant) given revealed ``history``.

    The target column of ``rows`` is never read: it is masked before the
    features are computed.
    """
    if tp is None:
        raise UnfittedPipeline("pipeline has not been trained")
    if not len(rows):
        return np.zeros(0)
    current = rows.frame.copy()
    current[rows.schema.target_col] = np.nan
    parts = [LongTable(rows.schema, current)]
    if history is not None and len(history):
        parts.insert(0, history_tail(history, tp.plan.options.lookback + 1))
    buf = concat(parts) if len(parts) > 1 else parts[0]
    m = tp.plan.transform(buf)
    k = len(current)
    X = m.values[-k:]
    g, lin = _member_preds(tp.gbdt, tp.linear, X, m.anchor[-k:], tp.differencing)
    return tp.plan.target.inverse(_combine(tp.weights, g, lin))


def pipeline_update(tp: TrainedPipeline | None, history: LongTable, clock: BudgetClock | None = None) -> TrainedPipeline:
    """Refit plan statistics and members on ``history`` with the searched settings."""
    if tp is None:
        raise UnfittedPipeline("pipeline has not been trained")
    if clock is not None:
        if clock.exhausted:
            raise BudgetExhausted(f"budget of {clock.total_budget_seconds:.3f}s already consumed")
        # the (1 - safety) share of the budget is a reserve for the remaining
        # predict calls; skip a refit that is expected to dig into it
        expected = max(tp.first_train_seconds, tp.last_refit_seconds)
        reserve = (1.0 - tp.config.safety_coefficient) * clock.total_budget_seconds
        if clock.remaining - expected < reserve:
            raise BudgetExhausted(f"refit of ~{expected:.3f}s would enter the {reserve:.3f}s reserve")
    t0 = time.perf_counter()
    history = sort_by_time(history)
    plan = tp.plan.refit(history)
    gbdt, linear = _fit_members(plan, history, tp.hyperparams, tp.differencing, tp.config,
                                tp.linear is not None, tp.seed)
    out = TrainedPipeline(**{f.name: getattr(tp, f.name) for f in fields(TrainedPipeline)})
    out.plan, out.gbdt, out.linear = plan, gbdt, linear
    out.update_count = tp.update_count + 1
    out.last_refit_seconds = time.perf_counter() - t0
    return out


class AutoSeriesPipeline:
    """Stateful adapter with the train / predict / update methods the harness calls."""

    def __init__(self, config: PipelineConfig | None = None):
        self.config = config or PipelineConfig()
        self.state: TrainedPipeline | None = None

    @property
    def schedule(self) -> UpdateSchedule:
        if self.state is None:
            raise UnfittedPipeline("pipeline has not been trained")
        return self.state.schedule

    def train(self, train: LongTable, clock: BudgetClock, n_test_steps: int) -> None:
        self.state = pipeline_train(train, clock, self.config, n_test_steps)

    def predict(self, rows: LongTable, history: LongTable | None) -> np.ndarray:
        return pipeline_predict(self.state, rows, history)

    def update(self, history: LongTable, clock: BudgetClock) -> None:
        self.state = pipeline_update(self.state, history, clock)
