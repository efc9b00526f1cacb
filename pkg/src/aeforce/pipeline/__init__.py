from .combine import combine
from .importance import feature_correlations, importance_single, importance_subsets, loo_score
from .metrics import pearson, r2
from .scales import (
    CoarseScaleConfig,
    FeatureMatrix,
    FineScaleConfig,
    PredictionSeries,
    coarse_matrix,
    combine_predictions,
    fine_matrix,
    leave_one_out_fine,
    predict_coarse,
    predict_experiment,
    predict_fine,
    train_coarse,
    train_fine,
)
from .transfer import transfer_matrix
