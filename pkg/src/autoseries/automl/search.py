"""Random search over a finite hyperparameter grid, and ensemble weighting."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np


class DeadlineBeforeFirstEval(RuntimeError):
    pass


DEFAULT_AXES = {
    "num_leaves": (15, 31, 63, 127),
    "min_child_samples": (5, 10, 20),
    "subsample_freq": (0, 1),
    "colsample_bytree": (0.6, 0.8, 0.9, 1.0),
    "subsample": (0.5, 0.6, 0.7, 0.8, 1.0),
    "lambda_l2": (0.0, 0.1, 0.5, 1.0, 10.0, 100.0),
}
DEFAULT_CONFIG = {
    "num_leaves": 31,
    "min_child_samples": 20,
    "subsample_freq": 0,
    "colsample_bytree": 1.0,
    "subsample": 1.0,
    "lambda_l2": 0.0,
}


@dataclass
class SearchSpace:
    axes: dict = field(default_factory=lambda: dict(DEFAULT_AXES))
    default: dict = field(default_factory=lambda: dict(DEFAULT_CONFIG))

    def __post_init__(self):
        self.axes = {k: tuple(v) for k, v in self.axes.items()}
        for k, vals in self.axes.items():
            if not vals:
                raise ValueError(f"axis {k!r} is empty")
        self.default = {k: self.default.get(k, vals[0]) for k, vals in self.axes.items()}
        for k, v in self.default.items():
            if v not in self.axes[k]:
                raise ValueError(f"default {k}={v!r} is not on the grid")

    @property
    def cardinality(self) -> int:
        return math.prod(len(v) for v in self.axes.values())

    def config_at(self, flat: int) -> dict:
        """Mixed-radix decode; the last axis varies fastest."""
        out = {}
        for k in reversed(list(self.axes)):
            vals = self.axes[k]
            flat, i = divmod(flat, len(vals))
            out[k] = vals[i]
        return {k: out[k] for k in self.axes}

    def index_of(self, config: dict) -> int:
        flat = 0
        for k, vals in self.axes.items():
            flat = flat * len(vals) + vals.index(config[k])
        return flat

    def sequence(self, seed: int):
        """Default config, then the rest of the grid in a seeded random order."""
        first = self.index_of(self.default)
        yield self.config_at(first)
        perm = np.random.default_rng(seed).permutation(self.cardinality)
        for flat in perm:
            if flat != first:
                yield self.config_at(int(flat))

    def with_overrides(self, overrides: dict) -> "SearchSpace":
        axes = dict(self.axes)
        axes.update({k: tuple(v) for k, v in overrides.items()})
        default = {k: v for k, v in self.default.items() if k in axes and v in axes[k]}
        return SearchSpace(axes, default)

    def to_dict(self) -> dict:
        return {"axes": {k: list(v) for k, v in self.axes.items()}, "default": dict(self.default)}


@dataclass
class SearchResult:
    best_config: dict
    best_score: float
    best_info: object
    history: list  # (config, score, info) in evaluation order

    @property
    def n_evals(self) -> int:
        return len(self.history)


def random_search(
    space: SearchSpace,
    evaluate,
    deadline: float | None = None,
    seed: int = 0,
    max_evals: int | None = None,
) -> SearchResult:
    """Evaluate configs from ``space.sequence(seed)`` until the deadline.

    ``evaluate(config)`` returns a score (lower is better) or ``(score, info)``.
    ``deadline`` is a ``time.perf_counter`` instant, checked before every
    evaluation; the default config is always evaluated. Ties keep the
    earlier evaluation.
    """
    if deadline is not None and time.perf_counter() >= deadline:
        raise DeadlineBeforeFirstEval("deadline passed before the first evaluation")
    history = []
    best = None
    for config in space.sequence(seed):
        if history:
            if max_evals is not None and len(history) >= max_evals:
                break
            if deadline is not None and time.perf_counter() >= deadline:
                break
        out = evaluate(dict(config))
        score, info = out if isinstance(out, tuple) else (out, None)
        score = float(score)
        history.append((config, score, info))
        if best is None or score < best[1]:
            best = (config, score, info)
    return SearchResult(best[0], best[1], best[2], history)


def ensemble_weights(rmses) -> np.ndarray:
    """Weights proportional to 1 / RMSE; exact zeros share all the weight."""
    r = np.asarray(rmses, dtype=float)
    if r.ndim != 1 or not len(r):
        raise ValueError("need at least one RMSE")
    if np.any(r < 0) or np.any(np.isnan(r)):
        raise ValueError("RMSEs must be non-negative")
    zero = r == 0
    if zero.any():
        return zero / zero.sum()
    inv = 1.0 / r
    return inv / inv.sum()


FUSION_GRID = np.round(np.arange(21) * 0.05, 10)


def _rmse(a, b) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def fusion_search(linear_pred, gbdt_pred, y) -> float:
    """Grid alpha minimizing RMSE of ``alpha * gbdt + (1 - alpha) * linear``; ties favour larger alpha."""
    lin = np.asarray(linear_pred, dtype=float)
    gb = np.asarray(gbdt_pred, dtype=float)
    best_a, best_r = None, None
    for a in FUSION_GRID[::-1]:
        r = _rmse(a * gb + (1 - a) * lin, y)
        if best_r is None or r < best_r:
            best_a, best_r = float(a), r
    return best_a
