"""Boosted trees with regularization-aware feature attributions."""

from .attribution import (
    AttributionMatrix,
    NodeValues,
    node_values_hat,
    node_values_tilde,
    predecomp,
    saabas_tilde_ifa,
    total_gain,
    total_gain_via_inner,
)
from .data import Dataset, InvalidInputError, ShapeError, read_csv
from .gbt import (
    ConfigError,
    GBTClassifier,
    GBTRegressor,
    TrainConfig,
    fit,
    grad_hess,
    grow_tree,
    load_model,
    predict,
    split_gain,
)
from .gfa import GFAResult, TreeInnerSelector, abs_gfa, forest_inner, permutation_importance, tree_inner
from .metrics import auc, normalize_l1, normalize_l2, risk

__version__ = "0.1.0"
