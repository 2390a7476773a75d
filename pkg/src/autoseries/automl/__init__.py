from .pipeline import (
    AutoSeriesPipeline,
    LinearMember,
    PipelineConfig,
    TrainedPipeline,
    UnfittedPipeline,
    history_tail,
    pipeline_predict,
    pipeline_train,
    pipeline_update,
    validation_cut,
)
from .schedule import BudgetClock, BudgetExhausted, Strategy, UpdateSchedule, compute_update_schedule
from .search import (
    DEFAULT_AXES,
    DEFAULT_CONFIG,
    DeadlineBeforeFirstEval,
    SearchResult,
    SearchSpace,
    ensemble_weights,
    fusion_search,
    random_search,
)
from .selection import RATIO_ORDER, rank_numeric_features, ratio_masks, select_feature_ratio
