"""graftml: survival-aware classification toolkit for kidney transplant
outcome modeling."""

from .cohort import (
    Cohort,
    CohortError,
    FilterReport,
    HorizonLabel,
    SyntheticConfig,
    TransplantRecord,
    apply_filters,
    derive_label,
    generate_synthetic_cohort,
    parse_cohort,
    validate_record,
    write_cohort,
)
from .kdri import RiskCoefficientSet, kdri_as_classifier, kdri_score, load_coefficients
from .forest import (
    ForestModel,
    ForestParams,
    balanced_bootstrap,
    gini_impurity,
    load_model,
    predict_proba,
    save_model,
    train_forest,
    variable_importance,
)
from .metrics import (
    ConfusionMatrix,
    DeLongResult,
    ForestSpec,
    KdriSpec,
    PredictionSet,
    RocCurve,
    auc,
    compare_models_at_fnr,
    confusion_at,
    cross_validate,
    delong_test,
    roc_curve,
    threshold_at_fnr,
)
from .survival import (
    KmCurve,
    LogRankResult,
    SurvivalSample,
    km_estimate,
    log_rank,
    split_by_prediction,
)

__version__ = "0.1.0"
