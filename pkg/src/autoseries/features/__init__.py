from .calendar import extract_calendar
from .encoders import (
    KeyCrossOverflow,
    apply_frozen_totals,
    apply_group_mean,
    fit_group_mean,
    impute_mean,
    key_cross,
    label_encode,
    ordered_target_encode,
)
from .plan import (
    FeatureMatrix,
    FeatureOptions,
    FeaturePlan,
    TargetTransform,
    difference_target,
    integrate_target,
    series_codes,
)
from .temporal import (
    EPS_RATIO,
    SeriesIndex,
    delta_features,
    lag_and_diff,
    pairwise_interactions,
    rolling_stats,
)
