"""Innovation-index pipeline: indicator panels in, forest predictions,
per-metric contributions, country clusters and pairwise comparisons out."""

from .analysis import ComparisonReport, compare_groups, compare_pair, summarize_run
from .attribution import (
    ContributionMatrix,
    ContributionVector,
    contribution_matrix,
    forest_contributions,
    tree_contributions,
)
from .clustering import Clustering, cluster_contributions, kmeanspp_init, lloyd
from .dataset import (
    Panel,
    ScalerParams,
    Schema,
    SupervisedMatrix,
    align_target,
    apply_scaler,
    fit_scaler,
    load_panel,
    prepare_supervised,
)
from .exceptions import ConfigError, DataError, InnovationIndexError, TrainingError
from .forest import (
    ForestModel,
    ForestParams,
    Tree,
    evaluate,
    fit_forest,
    fit_tree,
    load_model,
    predict_forest,
    predict_tree,
    save_model,
)

__version__ = "0.1.0"
