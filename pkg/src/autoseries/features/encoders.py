"""Categorical encoders: label ids, key crossing, mean imputation, target statistics."""

from __future__ import annotations

import numpy as np
import pandas as pd

MISSING_TOKEN = "__missing__"


class KeyCrossOverflow(OverflowError):
    """Too many key combinations to fold into a 63-bit batch id."""


def _tokens(col) -> list:
    return [MISSING_TOKEN if v is None or (isinstance(v, float) and np.isnan(v)) else str(v) for v in col]


def fit_label_mapping(col) -> dict:
    """Dense ids in first-appearance order."""
    mapping: dict = {}
    for tok in _tokens(col):
        if tok not in mapping:
            mapping[tok] = len(mapping)
    return mapping


def label_encode(col, mapping: dict | None = None):
    """Encode tokens; ``mapping=None`` fits one. Unseen tokens get id ``len(mapping)``.

    Returns ``(codes, mapping)``.
    """
    if mapping is None:
        mapping = fit_label_mapping(col)
    unseen = len(mapping)
    codes = np.fromiter((mapping.get(t, unseen) for t in _tokens(col)), dtype=np.int64, count=len(col))
    return codes, mapping


_INT_LIMIT = np.iinfo(np.int64).max


def key_radices(code_cols) -> list:
    """Radix per key column: the largest observed code plus one."""
    radices = [int(np.max(c)) + 1 if len(c) else 1 for c in code_cols]
    total = 1
    for r in radices:
        total *= r
        if total >= _INT_LIMIT:
            raise KeyCrossOverflow(f"key radices {radices} overflow 63-bit ids")
    return radices


def key_cross(code_cols, radices=None) -> tuple[np.ndarray, list]:
    """Fold key codes into one id: ``e = e * radix + c`` per column, in order.

    With frozen ``radices``, any row carrying a code beyond its column's
    radix (an unseen key) maps to the reserved id ``prod(radices)``.
    Returns ``(batch_id, radices)``.
    """
    code_cols = [np.asarray(c, dtype=np.int64) for c in code_cols]
    if not code_cols:
        return np.zeros(0, dtype=np.int64), []
    n = len(code_cols[0])
    if radices is None:
        radices = key_radices(code_cols)
    e = np.zeros(n, dtype=np.int64)
    unseen = np.zeros(n, dtype=bool)
    for c, r in zip(code_cols, radices):
        unseen |= c >= r
        e = e * r + np.minimum(c, r - 1)
    reserved = int(np.prod(np.asarray(radices, dtype=object)))
    e[unseen] = reserved
    return e, list(radices)


def impute_mean(col, mean: float | None = None) -> tuple[np.ndarray, float]:
    """Replace NaN with ``mean`` (fitted from the column when None; 0 if all missing)."""
    col = np.asarray(col, dtype=float)
    if mean is None:
        ok = ~np.isnan(col)
        mean = float(col[ok].mean()) if ok.any() else 0.0
    return np.where(np.isnan(col), mean, col), mean


def ordered_target_encode(keys, times, target, prior: float, a: float = 1.0):
    """Ordered target statistic from rows with strictly earlier timestamps.

    ``(sum of earlier targets in the category + a * prior) / (earlier count + a)``.
    Missing targets contribute nothing. Returns ``(encoding, totals)`` where
    ``totals`` maps each category to its final ``(sum, count)``.
    """
    keys = np.asarray(keys, dtype=np.int64)
    times = np.asarray(times).astype("int64")
    y = np.asarray(target, dtype=float)
    n = len(keys)
    if n == 0:
        return np.zeros(0), {}
    ok = ~np.isnan(y)
    yv = np.where(ok, y, 0.0)
    order = np.lexsort((times, keys))
    k_s, t_s = keys[order], times[order]
    new_key = np.ones(n, dtype=bool)
    new_key[1:] = k_s[1:] != k_s[:-1]
    new_block = new_key.copy()
    new_block[1:] |= t_s[1:] != t_s[:-1]
    # per-category running sums, shifted by one row so each entry only holds
    # earlier rows; a global cumsum minus an offset would leak rounding noise
    seg = np.cumsum(new_key)
    inc_s = pd.Series(yv[order]).groupby(seg).cumsum().to_numpy()
    inc_c = pd.Series(ok[order].astype(np.int64)).groupby(seg).cumsum().to_numpy()
    cs = np.where(new_key, 0.0, np.roll(inc_s, 1))
    cc = np.where(new_key, 0, np.roll(inc_c, 1))
    # every row of a (category, timestamp) block takes the value at its first row
    idx = np.arange(n)
    block_start = np.maximum.accumulate(np.where(new_block, idx, 0))
    s = cs[block_start]
    c = cc[block_start]
    enc = np.empty(n)
    enc[order] = (s + a * prior) / (c + a)
    frame = pd.DataFrame({"k": keys, "s": yv, "c": ok.astype(np.int64)})
    agg = frame.groupby("k", sort=True).sum()
    totals = {int(k): (float(r.s), int(r.c)) for k, r in zip(agg.index, agg.itertuples())}
    return enc, totals


def apply_frozen_totals(keys, totals: dict, prior: float, a: float = 1.0) -> np.ndarray:
    """Encode with frozen per-category totals; unseen categories get ``prior``."""
    keys = np.asarray(keys, dtype=np.int64)
    if not totals:
        return np.full(len(keys), prior)
    tk = np.fromiter(totals.keys(), dtype=np.int64)
    ts = np.array([v[0] for v in totals.values()])
    tc = np.array([v[1] for v in totals.values()], dtype=float)
    srt = np.argsort(tk)
    tk, ts, tc = tk[srt], ts[srt], tc[srt]
    pos = np.clip(np.searchsorted(tk, keys), 0, len(tk) - 1)
    hit = tk[pos] == keys
    return np.where(hit, (ts[pos] + a * prior) / (tc[pos] + a), prior)


def fit_group_mean(keys, target, min_group_size: int = 5, blend: float = 0.8):
    """Blended group means ``blend * group + (1 - blend) * global`` for big groups.

    Returns ``(table, global_mean)``; small groups are left out of the table
    and so fall back to the global mean, as do unseen categories.
    """
    keys = np.asarray(keys, dtype=np.int64)
    y = np.asarray(target, dtype=float)
    ok = ~np.isnan(y)
    glob = float(y[ok].mean()) if ok.any() else 0.0
    if not ok.any():
        return {}, glob
    agg = pd.DataFrame({"k": keys[ok], "y": y[ok]}).groupby("k", sort=True)["y"].agg(["mean", "size"])
    big = agg[agg["size"] >= min_group_size]
    table = {int(k): float(blend * m + (1.0 - blend) * glob) for k, m in zip(big.index, big["mean"])}
    return table, glob


def apply_group_mean(keys, table: dict, global_mean: float) -> np.ndarray:
    keys = np.asarray(keys, dtype=np.int64)
    return pd.Series(keys).map(table).fillna(global_mean).to_numpy(dtype=float)
