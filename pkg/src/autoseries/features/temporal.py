"""Causal per-series transforms: lags, differences, rolling windows, deltas.

Every function takes values in table row order plus a :class:`SeriesIndex`
and returns arrays in the same row order. Row ``r`` only ever sees rows that
come strictly before it within its own series.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

EPS_RATIO = 1e-8


@dataclass
class SeriesIndex:
    """Row order sorted by (series, time) with the position of each row in its series."""

    order: np.ndarray  # sorted position -> table row
    pos: np.ndarray  # position within its series, in sorted order
    series: np.ndarray  # series code, in sorted order

    @classmethod
    def build(cls, series_codes, times) -> "SeriesIndex":
        series_codes = np.asarray(series_codes, dtype=np.int64)
        times = np.asarray(times)
        order = np.lexsort((np.arange(len(times)), times, series_codes))
        s = series_codes[order]
        n = len(s)
        starts = np.ones(n, dtype=bool)
        if n:
            starts[1:] = s[1:] != s[:-1]
        start_idx = np.maximum.accumulate(np.where(starts, np.arange(n), 0)) if n else np.zeros(0, int)
        pos = np.arange(n) - start_idx
        return cls(order=order, pos=pos, series=s)

    def __len__(self) -> int:
        return len(self.order)

    def to_sorted(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float)[self.order]

    def to_rows(self, sorted_values: np.ndarray) -> np.ndarray:
        out = np.empty_like(sorted_values)
        out[self.order] = sorted_values
        return out

    def shift_sorted(self, v: np.ndarray, k: int) -> np.ndarray:
        """Value ``k`` rows earlier in the same series (sorted order), NaN otherwise."""
        out = np.full(len(v), np.nan)
        if k < len(v):
            out[k:] = v[:-k] if k else v
            out[self.pos < k] = np.nan
        return out

    def lag_stack_sorted(self, v: np.ndarray, depth: int) -> np.ndarray:
        """Columns lag 1..depth of ``v`` (sorted order)."""
        return np.column_stack([self.shift_sorted(v, k) for k in range(1, depth + 1)]) if depth else np.empty((len(v), 0))


def shift(values, index: SeriesIndex, k: int) -> np.ndarray:
    return index.to_rows(index.shift_sorted(index.to_sorted(values), k))


def lag_and_diff(values, index: SeriesIndex, lags, is_target: bool):
    """Lag columns and difference columns for one source column.

    Covariate differences are ``x_t - lag_k``. Target differences are
    anchored at lag 1 so they never read ``y_t``; ``lag_1 - lag_1`` is
    identically zero and is therefore not emitted.
    """
    v = index.to_sorted(values)
    lag_cols = {k: index.shift_sorted(v, k) for k in lags}
    diff_cols = {}
    if is_target:
        ref = lag_cols[1] if 1 in lag_cols else index.shift_sorted(v, 1)
        for k in lags:
            if k > 1:
                diff_cols[k] = ref - lag_cols[k]
    else:
        for k in lags:
            diff_cols[k] = v - lag_cols[k]
    return (
        {k: index.to_rows(c) for k, c in lag_cols.items()},
        {k: index.to_rows(c) for k, c in diff_cols.items()},
    )


def _window_stats(stack: np.ndarray) -> dict:
    ok = ~np.isnan(stack)
    cnt = ok.sum(axis=1)
    has = cnt > 0
    with warnings.catch_warnings(), np.errstate(invalid="ignore", divide="ignore"):
        warnings.simplefilter("ignore", RuntimeWarning)
        total = np.where(ok, stack, 0.0).sum(axis=1)
        mean = np.where(has, total / np.maximum(cnt, 1), np.nan)
        dev = np.where(ok, stack - mean[:, None], 0.0)
        std = np.where(has, np.sqrt((dev * dev).sum(axis=1) / np.maximum(cnt, 1)), np.nan)
        mx = np.where(has, np.nanmax(np.where(ok, stack, -np.inf), axis=1), np.nan)
        mn = np.where(has, np.nanmin(np.where(ok, stack, np.inf), axis=1), np.nan)
    return {"mean": mean, "std": std, "max": mx, "min": mn}


def rolling_stats(values, index: SeriesIndex, windows=(3, 7, 14, 30)) -> dict:
    """``{(stat, w): column}`` over the ``w`` strictly earlier rows of each series.

    Missing values inside the window are skipped; a window with nothing
    observed yields NaN. The standard deviation is the population one.
    """
    v = index.to_sorted(values)
    stack = index.lag_stack_sorted(v, max(windows) if windows else 0)
    out = {}
    for w in windows:
        for stat, col in _window_stats(stack[:, :w]).items():
            out[(stat, w)] = index.to_rows(col)
    return out


def delta_features(values, index: SeriesIndex) -> dict:
    """First difference, second difference and one-step ratio, all from past rows."""
    v = index.to_sorted(values)
    y1 = index.shift_sorted(v, 1)
    y2 = index.shift_sorted(v, 2)
    y3 = index.shift_sorted(v, 3)
    d1 = y1 - y2
    d2 = d1 - (y2 - y3)
    ratio = y1 / (y2 + EPS_RATIO)
    return {"d1": index.to_rows(d1), "d2": index.to_rows(d2), "ratio": index.to_rows(ratio)}


def last_observed(values, index: SeriesIndex) -> np.ndarray:
    """Most recent non-missing value strictly before each row in its series."""
    v = index.shift_sorted(index.to_sorted(values), 1)
    n = len(v)
    if n == 0:
        return v
    seen = ~np.isnan(v)
    starts = index.pos == 0
    # forward fill inside each series; a series start resets the carry
    mark = np.where(seen | starts, np.arange(n), 0)
    np.maximum.accumulate(mark, out=mark)
    return index.to_rows(v[mark])


def change_indicator(codes, index: SeriesIndex) -> np.ndarray:
    """1.0 where the category differs from the previous row of the series, NaN at series start."""
    c = index.to_sorted(codes)
    prev = index.shift_sorted(c, 1)
    out = np.where(np.isnan(prev), np.nan, (c != prev).astype(float))
    return index.to_rows(out)


INTERACTION_OPS = ("add", "sub", "mul", "div")


def pairwise_interactions(columns: dict, top: list) -> dict:
    """Sum, difference, product and safe quotient for each unordered pair in ``top``."""
    out = {}
    for i in range(len(top)):
        for j in range(i + 1, len(top)):
            a, b = top[i], top[j]
            x, y = np.asarray(columns[a], dtype=float), np.asarray(columns[b], dtype=float)
            out[f"{a}__add__{b}"] = x + y
            out[f"{a}__sub__{b}"] = x - y
            out[f"{a}__mul__{b}"] = x * y
            out[f"{a}__div__{b}"] = x / (y + EPS_RATIO)
    return out
