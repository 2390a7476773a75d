"""Gradient-boosted regression trees with squared loss.

Trees grow leaf-wise over exact split candidates (midpoints between sorted
distinct values). Missing feature values sort last and always take the right
branch. Leaves hold ``sum(residual) / (n + lambda_l2)``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import _tree_kernels as K


class DeadlineBeforeFirstTree(RuntimeError):
    """The deadline passed before a single boosting round could start."""


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class GbdtHyperparams:
    num_leaves: int = 31
    min_child_samples: int = 20
    learning_rate: float = 0.1
    num_boost_round: int = 100
    subsample: float = 1.0
    subsample_freq: int = 0
    colsample_bytree: float = 1.0
    lambda_l2: float = 0.0

    def __post_init__(self):
        if self.num_leaves < 2:
            raise ValueError("num_leaves must be >= 2")
        if self.min_child_samples < 1:
            raise ValueError("min_child_samples must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.num_boost_round < 0:
            raise ValueError("num_boost_round must be >= 0")
        if not 0 < self.subsample <= 1:
            raise ValueError("subsample must be in (0, 1]")
        if self.subsample_freq < 0:
            raise ValueError("subsample_freq must be >= 0")
        if not 0 < self.colsample_bytree <= 1:
            raise ValueError("colsample_bytree must be in (0, 1]")
        if self.lambda_l2 < 0:
            raise ValueError("lambda_l2 must be >= 0")

    def replace(self, **changes) -> "GbdtHyperparams":
        return GbdtHyperparams(**{**asdict(self), **changes})


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    count: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def leaf_counts(self) -> np.ndarray:
        return self.count[self.feature < 0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return K.predict_tree(X, self.feature, self.threshold, self.left, self.right, self.value)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "gain": self.gain.tolist(),
            "count": self.count.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Tree":
        ints = {"feature", "left", "right", "count"}
        return cls(**{k: np.asarray(v, dtype=np.int64 if k in ints else float) for k, v in doc.items()})


@dataclass
class FeatureImportance:
    feature_names: list
    gain: np.ndarray
    split_count: np.ndarray

    def ranked(self) -> list[int]:
        """Feature ids by descending gain; ties keep the lower id first."""
        return sorted(range(len(self.gain)), key=lambda j: (-self.gain[j], j))

    def to_dict(self) -> dict:
        return {
            name: {"gain": float(g), "splits": int(c)}
            for name, g, c in zip(self.feature_names, self.gain, self.split_count)
        }


@dataclass
class GbdtModel:
    trees: list
    base_score: float
    per_row_init: bool
    hyperparams: GbdtHyperparams
    feature_names: list
    train_mse: list = field(default_factory=list)
    valid_rmse: list = field(default_factory=list)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def _init(self, n: int, init_score) -> np.ndarray:
        if init_score is None:
            if self.per_row_init:
                raise ValueError("model was trained with a per-row init score; pass init_score")
            return np.full(n, self.base_score)
        init = np.broadcast_to(np.asarray(init_score, dtype=float), (n,))
        return init.astype(float, copy=True)

    def predict(self, X, init_score=None, n_trees: int | None = None) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"expected {self.n_features} features, got {X.shape[1] if X.ndim == 2 else X.shape}"
            )
        out = self._init(X.shape[0], init_score)
        lr = self.hyperparams.learning_rate
        for tree in self.trees[: n_trees if n_trees is not None else len(self.trees)]:
            out += lr * tree.predict(X)
        return out

    def truncated(self, n_trees: int) -> "GbdtModel":
        return GbdtModel(
            trees=self.trees[:n_trees],
            base_score=self.base_score,
            per_row_init=self.per_row_init,
            hyperparams=self.hyperparams.replace(num_boost_round=min(n_trees, len(self.trees))),
            feature_names=list(self.feature_names),
            train_mse=self.train_mse[: n_trees + 1],
            valid_rmse=self.valid_rmse[: n_trees + 1],
        )

    def feature_importance(self) -> FeatureImportance:
        gain = np.zeros(self.n_features)
        count = np.zeros(self.n_features, dtype=np.int64)
        for tree in self.trees:
            split = tree.feature >= 0
            np.add.at(gain, tree.feature[split], tree.gain[split])
            np.add.at(count, tree.feature[split], 1)
        return FeatureImportance(list(self.feature_names), gain, count)

    def to_dict(self) -> dict:
        return {
            "hyperparams": asdict(self.hyperparams),
            "base_score": self.base_score,
            "per_row_init": self.per_row_init,
            "feature_names": list(self.feature_names),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GbdtModel":
        return cls(
            trees=[Tree.from_dict(t) for t in doc["trees"]],
            base_score=float(doc["base_score"]),
            per_row_init=bool(doc["per_row_init"]),
            hyperparams=GbdtHyperparams(**doc["hyperparams"]),
            feature_names=list(doc["feature_names"]),
        )


def _single_leaf(resid: np.ndarray, rows: np.ndarray, lam: float) -> Tree:
    n = len(rows)
    value = resid[rows].sum() / (n + lam) if n + lam > 0 else 0.0
    return Tree(
        feature=np.array([-1]), threshold=np.zeros(1), left=np.array([-1]), right=np.array([-1]),
        value=np.array([value]), gain=np.zeros(1), count=np.array([n]),
    )


def fit_gbdt(
    X,
    y,
    hp: GbdtHyperparams,
    init_score=None,
    seed: int = 0,
    deadline: float | None = None,
    feature_names=None,
    valid=None,
) -> GbdtModel:
    """Boost ``hp.num_boost_round`` trees on squared loss.

    ``deadline`` is a ``time.perf_counter()`` instant; boosting stops at the
    first round that starts after it. ``valid`` is an optional
    ``(X_val, y_val)`` or ``(X_val, y_val, init_val)`` tuple whose RMSE is
    tracked after every round in ``model.valid_rmse``.
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"X has shape {X.shape}, y has {y.shape[0]} rows")
    n, F = X.shape
    if n < hp.min_child_samples:
        raise ValueError(f"need at least min_child_samples={hp.min_child_samples} rows, got {n}")
    if feature_names is None:
        feature_names = [f"f{j}" for j in range(F)]

    if init_score is None:
        base = float(y.mean()) if n else 0.0
        pred = np.full(n, base)
        per_row = False
    else:
        base = 0.0
        pred = np.broadcast_to(np.asarray(init_score, dtype=float), (n,)).astype(float, copy=True)
        per_row = np.ndim(init_score) > 0

    model = GbdtModel([], base, per_row, hp, list(feature_names))
    if valid is not None:
        X_val = np.ascontiguousarray(valid[0], dtype=float)
        y_val = np.asarray(valid[1], dtype=float)
        if len(valid) > 2 and valid[2] is not None:
            val_pred = np.broadcast_to(np.asarray(valid[2], dtype=float), y_val.shape).astype(float, copy=True)
        else:
            val_pred = np.full(len(y_val), base)
        model.valid_rmse.append(float(np.sqrt(np.mean((y_val - val_pred) ** 2))))
    model.train_mse.append(float(np.mean((y - pred) ** 2)))

    rng = np.random.default_rng(seed)
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable"))
    n_cols = max(1, int(math.floor(hp.colsample_bytree * F + 0.5))) if F else 0
    bagging = hp.subsample_freq > 0 and hp.subsample < 1.0
    in_bag = np.ones(n, dtype=np.bool_)
    bag_rows = np.arange(n)
    lr = hp.learning_rate

    for k in range(hp.num_boost_round):
        if deadline is not None and time.perf_counter() >= deadline:
            if k == 0:
                raise DeadlineBeforeFirstTree("deadline passed before the first boosting round")
            break
        resid = y - pred
        if bagging and k % hp.subsample_freq == 0:
            size = max(1, int(math.floor(hp.subsample * n + 0.5)))
            bag_rows = np.sort(rng.choice(n, size=size, replace=False))
            in_bag = np.zeros(n, dtype=np.bool_)
            in_bag[bag_rows] = True
        if F == 0:
            tree = _single_leaf(resid, bag_rows, hp.lambda_l2)
        else:
            feats = np.arange(F, dtype=np.int64)
            if n_cols < F:
                feats = np.sort(rng.choice(F, size=n_cols, replace=False)).astype(np.int64)
            idx = K.bag_sorted_index(order, feats, in_bag, len(bag_rows))
            feature, thr, left, right, value, gain, count, m = K.build_tree(
                X, resid, idx, feats, hp.num_leaves, hp.min_child_samples, float(hp.lambda_l2)
            )
            tree = Tree(feature[:m], thr[:m], left[:m], right[:m], value[:m], gain[:m], count[:m])
        if tree.n_leaves == 1 and not bagging:
            break  # nothing left to split on the full sample
        model.trees.append(tree)
        pred += lr * tree.predict(X) if F else lr * tree.value[0]
        model.train_mse.append(float(np.mean((y - pred) ** 2)))
        if valid is not None:
            val_pred += lr * tree.predict(X_val) if F else lr * tree.value[0]
            model.valid_rmse.append(float(np.sqrt(np.mean((y_val - val_pred) ** 2))))
    return model


def predict_gbdt(model: GbdtModel, X, init_score=None) -> np.ndarray:
    return model.predict(X, init_score=init_score)


def feature_importance(model: GbdtModel) -> FeatureImportance:
    return model.feature_importance()
