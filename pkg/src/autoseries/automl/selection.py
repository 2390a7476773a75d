"""Importance-driven feature choices: top numeric columns and kept-feature ratio."""

from __future__ import annotations

import math

import numpy as np

from ..features.plan import FeatureMatrix
from ..models import GbdtHyperparams, fit_gbdt

RANKING_HP = GbdtHyperparams(num_leaves=15, num_boost_round=50, learning_rate=0.1, min_child_samples=20)
RATIO_ORDER = (0.2, 0.5, 0.75, 0.05, 0.1)
BASELINE_KINDS = ("calendar", "raw_continuous")


def _rmse(a, b) -> float:
    return float(np.sqrt(np.mean((a - b) ** 2)))


def rank_numeric_features(matrix: FeatureMatrix, label, continuous_cols, seed: int = 0, top: int = 3) -> list:
    """Up to ``top`` continuous source columns by split gain of a small booster.

    The booster sees the baseline columns only (calendar fields, imputed raw
    covariates and label codes). Ties keep schema order.
    """
    continuous_cols = list(continuous_cols)
    if not continuous_cols:
        return []
    if len(continuous_cols) == 1:
        return continuous_cols
    names = [
        n for n, k in zip(matrix.column_names, matrix.column_kinds)
        if k in BASELINE_KINDS or n.endswith("__label__code")
    ]
    sub = matrix.select(names)
    label = np.asarray(label, dtype=float)
    ok = ~np.isnan(label)
    hp = RANKING_HP.replace(min_child_samples=min(RANKING_HP.min_child_samples, max(1, int(ok.sum()) // 2)))
    model = fit_gbdt(sub.values[ok], label[ok], hp, seed=seed, feature_names=names)
    gain = dict(zip(names, model.feature_importance().gain))
    scored = [(-gain.get(f"{c}__impute__mean", 0.0), i, c) for i, c in enumerate(continuous_cols)]
    return [c for _, _, c in sorted(scored)[:top]]


def ratio_masks(gain, ratios=RATIO_ORDER) -> list:
    """``(ratio, kept column ids)`` per ratio, skipping sizes already produced."""
    gain = np.asarray(gain, dtype=float)
    n = len(gain)
    ranked = sorted(range(n), key=lambda j: (-gain[j], j))
    seen = set()
    out = []
    for r in ratios:
        k = min(n, max(1, math.ceil(r * n - 1e-9)))
        if k in seen:
            continue
        seen.add(k)
        out.append((r, sorted(ranked[:k])))
    return out


def select_feature_ratio(X_train, y_train, X_val, y_val, gain, hp: GbdtHyperparams, seed: int = 0,
                         init_train=None, init_val=None):
    """Pick the kept-feature ratio with the lowest validation RMSE.

    Returns ``(kept column ids, ratio, {ratio: rmse})``; ties keep the ratio
    that comes first in the search order.
    """
    results = {}
    best = None
    for r, cols in ratio_masks(gain):
        model = fit_gbdt(X_train[:, cols], y_train, hp, init_score=init_train, seed=seed,
                         valid=(X_val[:, cols], y_val, init_val))
        score = min(model.valid_rmse)
        results[r] = score
        if best is None or score < best[2]:
            best = (cols, r, score)
    return best[0], best[1], results
