from .gbdt import (
    DeadlineBeforeFirstTree,
    DimensionMismatch,
    FeatureImportance,
    GbdtHyperparams,
    GbdtModel,
    Tree,
    feature_importance,
    fit_gbdt,
    predict_gbdt,
)
from .linear import LinearModel, Regularization, fit_linear

__all__ = [
    "DeadlineBeforeFirstTree",
    "DimensionMismatch",
    "FeatureImportance",
    "GbdtHyperparams",
    "GbdtModel",
    "LinearModel",
    "Regularization",
    "Tree",
    "feature_importance",
    "fit_gbdt",
    "fit_linear",
    "predict_gbdt",
]
