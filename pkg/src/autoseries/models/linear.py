"""Ridge and lasso regression with an unpenalized intercept."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gbdt import DimensionMismatch

LASSO_TOL = 1e-8
LASSO_MAX_SWEEPS = 10_000


@dataclass(frozen=True)
class Regularization:
    kind: str = "none"  # "none" | "ridge" | "lasso"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "ridge", "lasso"):
            raise ValueError(f"unknown regularization {self.kind!r}")
        if self.lam < 0:
            raise ValueError("regularization strength must be >= 0")

    @classmethod
    def none(cls) -> "Regularization":
        return cls("none", 0.0)

    @classmethod
    def ridge(cls, lam: float) -> "Regularization":
        return cls("ridge", float(lam))

    @classmethod
    def lasso(cls, lam: float) -> "Regularization":
        return cls("lasso", float(lam))


@dataclass
class LinearModel:
    weights: np.ndarray
    intercept: float
    regularization: Regularization
    n_sweeps: int = 0

    @property
    def n_features(self) -> int:
        return len(self.weights)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got shape {X.shape}")
        return X @ self.weights + self.intercept

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "regularization": {"kind": self.regularization.kind, "lam": self.regularization.lam},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "LinearModel":
        return cls(
            np.asarray(doc["weights"], dtype=float),
            float(doc["intercept"]),
            Regularization(**doc["regularization"]),
        )


def _ridge(Xc: np.ndarray, yc: np.ndarray, lam: float) -> np.ndarray:
    d = Xc.shape[1]
    A = Xc.T @ Xc + lam * np.eye(d)
    b = Xc.T @ yc
    if lam > 0:
        return np.linalg.solve(A, b)
    # lstsq on the design itself handles rank deficiency (minimum-norm solution)
    return np.linalg.lstsq(Xc, yc, rcond=None)[0]


def _lasso(Xc: np.ndarray, yc: np.ndarray, lam: float) -> tuple[np.ndarray, int]:
    """Cyclic coordinate descent on (1/2n)||y - Xw||^2 + lam*||w||_1."""
    n, d = Xc.shape
    w = np.zeros(d)
    col_sq = (Xc * Xc).sum(axis=0) / n
    resid = yc.copy()
    sweeps = 0
    for sweeps in range(1, LASSO_MAX_SWEEPS + 1):
        max_step = 0.0
        for j in range(d):
            if col_sq[j] == 0.0:
                continue
            old = w[j]
            rho = Xc[:, j] @ resid / n + col_sq[j] * old
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_sq[j]
            if new != old:
                resid -= Xc[:, j] * (new - old)
                w[j] = new
                max_step = max(max_step, abs(new - old))
        if max_step <= LASSO_TOL:
            break
    return w, sweeps


def fit_linear(X, y, regularization: Regularization | None = None) -> LinearModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"X has shape {X.shape}, y has {y.shape[0]} rows")
    if X.shape[0] < 1:
        raise ValueError("need at least one row")
    if np.isnan(X).any():
        raise ValueError("X contains missing values; impute first")
    reg = regularization or Regularization.none()
    x_mean = X.mean(axis=0)
    y_mean = float(y.mean())
    Xc = X - x_mean
    yc = y - y_mean
    sweeps = 0
    if X.shape[1] == 0:
        w = np.zeros(0)
    elif reg.kind == "lasso":
        w, sweeps = _lasso(Xc, yc, reg.lam)
    else:
        w = _ridge(Xc, yc, reg.lam if reg.kind == "ridge" else 0.0)
    return LinearModel(w, y_mean - float(x_mean @ w), reg, sweeps)
