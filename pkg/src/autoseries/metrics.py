"""Prediction logs, error metrics, leaderboards and dataset difficulty."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd

DEFAULT_EPS = 1e-8


class EmptyLog(ValueError):
    pass


class GridMismatch(ValueError):
    pass


@dataclass
class PredictionLog:
    """One entry per (series n, time index t) with truth ``y`` and prediction ``yhat``.

    ``keys`` and ``timestamps`` are optional labels used only for export.
    """

    series: np.ndarray
    time: np.ndarray
    y: np.ndarray
    yhat: np.ndarray
    keys: list | None = None
    timestamps: np.ndarray | None = None

    def __post_init__(self):
        self.series = np.asarray(self.series, dtype=np.int64)
        self.time = np.asarray(self.time, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=float)
        self.yhat = np.asarray(self.yhat, dtype=float)
        n = len(self.y)
        if not (len(self.series) == len(self.time) == len(self.yhat) == n):
            raise ValueError("log columns differ in length")
        if not (np.isfinite(self.y).all() and np.isfinite(self.yhat).all()):
            raise ValueError("log values must be finite")
        if n:
            pairs = self.series * (int(self.time.max()) + 1) + self.time
            if len(np.unique(pairs)) != n:
                raise ValueError("duplicate (series, time) entries")

    @classmethod
    def from_arrays(cls, y, yhat) -> "PredictionLog":
        """Single-series log with time indices 1..n."""
        y = np.asarray(y, dtype=float)
        return cls(np.ones(len(y), dtype=np.int64), np.arange(1, len(y) + 1), y, yhat)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def N(self) -> int:
        return len(np.unique(self.series))

    @property
    def T(self) -> int:
        return len(np.unique(self.time))

    def grid(self) -> set:
        return set(zip(self.series.tolist(), self.time.tolist()))

    def sorted(self) -> "PredictionLog":
        order = np.lexsort((self.series, self.time))
        return PredictionLog(
            self.series[order], self.time[order], self.y[order], self.yhat[order],
            None if self.keys is None else [self.keys[i] for i in order],
            None if self.timestamps is None else self.timestamps[order],
        )

    def to_frame(self) -> pd.DataFrame:
        from .dataset import TIMESTAMP_FORMAT

        keys = self.keys if self.keys is not None else [str(s) for s in self.series]
        if self.timestamps is not None:
            stamps = pd.DatetimeIndex(self.timestamps).strftime(TIMESTAMP_FORMAT)
        else:
            stamps = [str(t) for t in self.time]
        return pd.DataFrame({"series_key": keys, "timestamp": stamps, "y": self.y, "yhat": self.yhat})

    def to_csv(self, path) -> None:
        from .dataset import format_floats

        frame = self.to_frame()
        frame["y"] = format_floats(self.y)
        frame["yhat"] = format_floats(self.yhat)
        frame.to_csv(path, index=False, lineterminator="\n")

    @classmethod
    def from_csv(cls, path) -> "PredictionLog":
        frame = pd.read_csv(path, dtype={"series_key": str, "timestamp": str})
        series = pd.factorize(frame["series_key"])[0] + 1
        time = pd.factorize(frame["timestamp"], sort=True)[0] + 1
        return cls(series, time, frame["y"].to_numpy(float), frame["yhat"].to_numpy(float),
                   frame["series_key"].tolist(), pd.to_datetime(frame["timestamp"]).to_numpy())


def _check(log: PredictionLog) -> None:
    if len(log) == 0:
        raise EmptyLog("prediction log is empty")


def rmse(log: PredictionLog) -> float:
    _check(log)
    e = log.y - log.yhat
    return float(np.sqrt(np.mean(e * e)))


def smape(log: PredictionLog, eps: float = DEFAULT_EPS) -> float:
    """Symmetric MAPE in percent (0..200)."""
    _check(log)
    num = np.abs(log.y - log.yhat)
    den = (np.abs(log.y) + np.abs(log.yhat) + eps) / 2.0
    return float(100.0 * np.mean(num / den))


def corr(log: PredictionLog) -> float:
    """Pearson correlation with global means; 0 when either side is constant."""
    _check(log)
    # test for constants directly: a rounded mean leaves tiny nonzero spreads
    if log.y.min() == log.y.max() or log.yhat.min() == log.yhat.max():
        return 0.0
    dy = log.y - log.y.mean()
    dp = log.yhat - log.yhat.mean()
    sy = np.sqrt(np.sum(dy * dy))
    sp = np.sqrt(np.sum(dp * dp))
    if sy == 0 or sp == 0:
        return 0.0
    return float(np.clip(np.sum(dy * dp) / (sy * sp), -1.0, 1.0))


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    smape_percent: float
    corr: float

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "smape_percent": self.smape_percent, "corr": self.corr}


def evaluate(log: PredictionLog, eps: float = DEFAULT_EPS) -> MetricReport:
    return MetricReport(rmse(log), smape(log, eps), corr(log))


# ---- leaderboards ------------------------------------------------------


@dataclass
class RankTable:
    values: pd.DataFrame  # solutions x datasets, NaN = NA
    ranks: pd.DataFrame  # same shape
    average: pd.Series  # mean rank per solution

    def to_frame(self) -> pd.DataFrame:
        out = self.ranks.copy()
        out["avg_rank"] = self.average
        return out

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index_label="solution", lineterminator="\n")

    def to_dict(self) -> dict:
        return {
            "values": json.loads(self.values.to_json(orient="index")),
            "ranks": json.loads(self.ranks.to_json(orient="index")),
            "avg_rank": self.average.to_dict(),
        }


def rank_solutions(values: pd.DataFrame) -> RankTable:
    """Rank solutions (rows) per dataset (column): lower metric is better.

    Ties share the average of their positions; NA ranks behind every value
    (several NAs tie among themselves), so each column still sums to S(S+1)/2.
    """
    values = values.astype(float)
    filled = values.fillna(np.inf)
    ranks = filled.rank(axis=0, method="average", ascending=True)
    return RankTable(values, ranks, ranks.mean(axis=1))


def rank_stability(tables: list, groups: dict | None = None) -> pd.DataFrame:
    """Mean and population std of each solution's average rank across seeds.

    ``tables`` holds one solutions x datasets frame per seed; ``groups`` maps
    a phase name to its dataset columns (default: one group with all).
    """
    if len(tables) < 2:
        raise ValueError("rank stability needs at least two seeds")
    if groups is None:
        groups = {"all": list(tables[0].columns)}
    out = {}
    for name, cols in groups.items():
        per_seed = pd.concat([rank_solutions(t[cols]).average for t in tables], axis=1)
        out[(name, "mean")] = per_seed.mean(axis=1)
        out[(name, "std")] = per_seed.std(axis=1, ddof=0)
    frame = pd.DataFrame(out)
    frame.columns = [f"{g}_{s}" for g, s in frame.columns]
    return frame


# ---- difficulty --------------------------------------------------------


@dataclass(frozen=True)
class DifficultyEntry:
    intrinsic: float
    modeling: float
    corr_best: float
    corr_baseline: float


def difficulty(best_log: PredictionLog, baseline_log: PredictionLog) -> DifficultyEntry:
    if best_log.grid() != baseline_log.grid():
        raise GridMismatch("best and baseline logs cover different (series, time) cells")
    cb, c0 = abs(corr(best_log)), abs(corr(baseline_log))
    return DifficultyEntry(1.0 - cb, cb - c0, corr(best_log), corr(baseline_log))


def best_solution(rmses: dict) -> str:
    """Lowest-RMSE solution name; ties keep the first name in sorted order."""
    return min(sorted(rmses), key=lambda k: rmses[k])


@dataclass
class DifficultyReport:
    entries: dict = field(default_factory=dict)  # dataset -> DifficultyEntry

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"dataset": d, "intrinsic": e.intrinsic, "modeling": e.modeling,
             "corr_best": e.corr_best, "corr_baseline": e.corr_baseline}
            for d, e in self.entries.items()
        ]
        return pd.DataFrame(rows, columns=["dataset", "intrinsic", "modeling", "corr_best", "corr_baseline"])

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, lineterminator="\n")

    def to_svg(self, path=None, width: int = 640, height: int = 320) -> str:
        """Grouped bars per dataset: gray intrinsic, orange modeling."""
        names = list(self.entries)
        pad_l, pad_r, pad_t, pad_b = 48, 16, 24, 56
        plot_w = width - pad_l - pad_r
        plot_h = height - pad_t - pad_b
        zero_y = pad_t + plot_h / 2.0  # axis spans [-1, 1]

        def y_of(v: float) -> float:
            return zero_y - v * plot_h / 2.0

        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>',
        ]
        for v in (-1.0, -0.5, 0.0, 0.5, 1.0):
            y = y_of(v)
            parts.append(f'<line x1="{pad_l}" y1="{y:.2f}" x2="{width - pad_r}" y2="{y:.2f}" '
                         f'stroke="{"black" if v == 0 else "#dddddd"}" stroke-width="1"/>')
            parts.append(f'<text x="{pad_l - 6}" y="{y + 4:.2f}" font-size="10" text-anchor="end">{v:g}</text>')
        slot = plot_w / max(1, len(names))
        bar = slot * 0.35
        for i, name in enumerate(names):
            e = self.entries[name]
            x0 = pad_l + i * slot + slot * 0.15
            for j, (val, color) in enumerate(((e.intrinsic, "#888888"), (e.modeling, "#ff8c00"))):
                top, bottom = sorted((y_of(val), zero_y))
                parts.append(f'<rect x="{x0 + j * bar:.2f}" y="{top:.2f}" width="{bar:.2f}" '
                             f'height="{bottom - top:.2f}" fill="{color}"/>')
            parts.append(f'<text x="{x0 + bar:.2f}" y="{height - pad_b + 16}" font-size="10" '
                         f'text-anchor="middle">{escape(str(name))}</text>')
        ly = height - 14
        parts.append(f'<rect x="{pad_l}" y="{ly - 9}" width="10" height="10" fill="#888888"/>')
        parts.append(f'<text x="{pad_l + 14}" y="{ly}" font-size="10">intrinsic</text>')
        parts.append(f'<rect x="{pad_l + 80}" y="{ly - 9}" width="10" height="10" fill="#ff8c00"/>')
        parts.append(f'<text x="{pad_l + 94}" y="{ly}" font-size="10">modeling</text>')
        parts.append("</svg>")
        text = "\n".join(parts) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text
