"""Kullback-Leibler penalized sparse discriminant analysis.

Sparse optimal-scoring discriminant directions with class-discrepancy
penalty weighting, a weighted elastic-net path solver, automatic
regularization selection by residual minimization over a (ridge, step)
grid, and an AUC cross-validation harness with a synthetic oddball-epoch
generator.
"""

from .dataset import (
    DataValidationError,
    EpochDataset,
    IndicatorMatrix,
    SyntheticConfig,
    center_columns,
    generate_synthetic,
    indicator,
    load_epochs,
    save_epochs,
    split_kfold,
)
from .divergence import (
    AnisotropyMatrix,
    HistogramPair,
    JMap,
    anisotropy_from_jmap,
    estimate_class_histograms,
    j_divergence,
    j_divergence_multi,
    j_map,
    kl_divergence,
)
from .larsen import (
    ConvergenceError,
    DegenerateStepError,
    PathStep,
    PenaltyPair,
    SolverLimits,
    SolverPath,
    augment,
    cd_reference_solver,
    generalized_enet,
    lars_lasso_path,
)
from .model import (
    DegenerateDirectionError,
    KlsdaConfig,
    KlsdaModel,
    ResidualTable,
    build_penalties,
    default_lambda2_grid,
    fit,
    fit_dataset,
    init_theta,
    load_model_json,
    model_to_json_dict,
    save_model_json,
    select_optimal,
    update_theta,
)
from .evaluate import (
    Classifier1D,
    CovarianceSummary,
    EvalReport,
    FldaConfig,
    covariance_summary,
    cross_validate,
    flda_direction,
    orient_classifier,
    project,
    roc_auc,
    sparsity_stats,
)

__version__ = "0.1.0"
