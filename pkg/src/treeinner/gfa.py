"""Global feature attributions built from path attributions.

TreeInner
    per tree, the inner product of an IFA with that tree's boosting residuals,
    summed over trees and divided by the learning rate.  Evaluated on the
    training rows with PreDecomp it equals the forest total gain; evaluated on
    held-out rows it is the debiased variant.
ForestInner
    the inner product of the forest-level IFA with the raw labels.
Abs
    the mean absolute forest-level IFA.
Permutation
    increase in risk after permuting one column.

IFAs are streamed tree by tree, so memory stays at ``n x p``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, clone
from sklearn.feature_selection import SelectorMixin

from . import _kernels
from .attribution import IFA_KINDS, AttributionMatrix, tree_node_values
from .data import Dataset, InvalidInputError, ShapeError, check_matrix
from .gbt import ConfigError, GBTRegressor, GradientBoostedTrees
from .metrics import risk, risk_from_raw

FAMILIES = ("tree_inner", "forest_inner", "abs", "permutation")
DOMAINS = ("train", "valid")

IFASource = Union[str, AttributionMatrix]


@dataclass
class GFAResult:
    scores: np.ndarray
    family: str
    ifa_kind: str
    domain: str
    model_id: Optional[str] = None
    feature_names: Optional[Sequence[str]] = None
    repeat_scores: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.family not in FAMILIES:
            raise ValueError(f"unknown GFA family {self.family!r}")
        if (self.family == "permutation") != (self.ifa_kind == "none"):
            raise ValueError("permutation importance takes ifa_kind 'none' and only it does")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("GFA scores must be finite")

    def names(self) -> list[str]:
        if self.feature_names is not None:
            return list(self.feature_names)
        return [f"x{k}" for k in range(self.scores.shape[0])]

    def to_dict(self) -> dict:
        return {
            "metadata": {
                "family": self.family,
                "ifa": self.ifa_kind,
                "domain": self.domain,
                "model_id": self.model_id,
            },
            "features": self.names(),
            "scores": [float(s) for s in self.scores],
        }

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["feature", "score", "family", "ifa", "domain"])
            for name, s in zip(self.names(), self.scores):
                w.writerow([name, repr(float(s)), self.family, self.ifa_kind, self.domain])

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")


def _check_inputs(model: GradientBoostedTrees, data: Dataset, domain: str):
    model._check_fitted()
    if domain not in DOMAINS:
        raise InvalidInputError(f"domain must be one of {DOMAINS}, got {domain!r}")
    if data.n_features != model.n_features_in_:
        raise ShapeError(f"data has {data.n_features} features, model expects {model.n_features_in_}")
    return data.features, data.labels


def _ifa_kind(ifa: IFASource) -> str:
    if isinstance(ifa, AttributionMatrix):
        return ifa.ifa_kind
    if ifa not in IFA_KINDS:
        raise InvalidInputError(f"unknown IFA {ifa!r}; expected one of {IFA_KINDS}")
    return ifa


def _check_matrix_source(model, ifa: AttributionMatrix, X):
    if ifa.per_tree.shape != (model.n_trees,) + X.shape:
        raise ShapeError(
            f"attribution matrix has shape {ifa.per_tree.shape}, expected {(model.n_trees,) + X.shape}"
        )


def _residual(model, y, raw):
    if model.loss == "logistic":
        return y - expit(raw)
    return y - raw


def tree_inner(
    model: GradientBoostedTrees,
    ifa: IFASource,
    data: Dataset,
    domain: str = "valid",
    model_id: Optional[str] = None,
) -> GFAResult:
    """``1/eta * sum_m sum_i r_{m,k}(x_i) * (y_i - f_[m-1](x_i))``.

    For logistic models the residual is taken on the probability scale,
    i.e. it is the negative gradient.
    """
    X, y = _check_inputs(model, data, domain)
    kind = _ifa_kind(ifa)
    scores = np.zeros(X.shape[1])
    if isinstance(ifa, AttributionMatrix):
        _check_matrix_source(model, ifa, X)
        for m, _tree, raw in model.staged_raw_before(X):
            scores += _residual(model, y, raw) @ ifa.per_tree[m]
    else:
        values = tree_node_values(model, kind)
        for m, tree, raw in model.staged_raw_before(X):
            resid = _residual(model, y, raw)
            _kernels.path_inner(X, resid, tree.feature, tree.threshold, tree.left, tree.right, values[m], scores)
    return GFAResult(scores / model.config_.eta, "tree_inner", kind, domain, model_id, data.feature_names)


def forest_inner(
    model: GradientBoostedTrees,
    ifa: IFASource,
    data: Dataset,
    domain: str = "valid",
    model_id: Optional[str] = None,
) -> GFAResult:
    """``1/eta * sum_i (sum_m r_{m,k}(x_i)) * y_i``."""
    X, y = _check_inputs(model, data, domain)
    kind = _ifa_kind(ifa)
    if isinstance(ifa, AttributionMatrix):
        _check_matrix_source(model, ifa, X)
        scores = y @ ifa.forest()
    else:
        scores = np.zeros(X.shape[1])
        for tree, v in zip(model.trees_, tree_node_values(model, kind)):
            _kernels.path_inner(X, y, tree.feature, tree.threshold, tree.left, tree.right, v, scores)
    return GFAResult(scores / model.config_.eta, "forest_inner", kind, domain, model_id, data.feature_names)


def forest_attributions(model: GradientBoostedTrees, X, ifa: str = "predecomp") -> np.ndarray:
    """n x p forest-level IFA accumulated tree by tree."""
    X = check_matrix(X, n_features=model.n_features_in_)
    out = np.zeros(X.shape)
    for tree, v in zip(model.trees_, tree_node_values(model, ifa)):
        _kernels.path_contributions(X, tree.feature, tree.threshold, tree.left, tree.right, v, out)
    return out


def abs_gfa(
    model: GradientBoostedTrees,
    ifa: IFASource,
    data: Dataset,
    domain: str = "valid",
    model_id: Optional[str] = None,
    aggregate: str = "forest",
) -> GFAResult:
    """Mean over rows of the absolute attribution.

    ``aggregate="forest"`` (default) takes ``|sum_m r_{m,k}(x_i)|``;
    ``aggregate="tree"`` takes ``sum_m |r_{m,k}(x_i)|``, so contributions of
    opposite sign from different trees no longer cancel.
    """
    X, _y = _check_inputs(model, data, domain)
    kind = _ifa_kind(ifa)
    if aggregate not in ("forest", "tree"):
        raise InvalidInputError(f"aggregate must be 'forest' or 'tree', got {aggregate!r}")
    if isinstance(ifa, AttributionMatrix):
        _check_matrix_source(model, ifa, X)
        if aggregate == "forest":
            return GFAResult(np.abs(ifa.forest()).mean(axis=0), "abs", kind, domain, model_id, data.feature_names)
        return GFAResult(
            np.abs(ifa.per_tree).mean(axis=1).sum(axis=0), "abs", kind, domain, model_id, data.feature_names
        )
    if aggregate == "forest":
        scores = np.abs(forest_attributions(model, X, kind)).mean(axis=0)
    else:
        scores = np.zeros(X.shape[1])
        buf = np.empty(X.shape)
        for tree, v in zip(model.trees_, tree_node_values(model, kind)):
            buf.fill(0.0)
            _kernels.path_contributions(X, tree.feature, tree.threshold, tree.left, tree.right, v, buf)
            scores += np.abs(buf).mean(axis=0)
    return GFAResult(scores, "abs", kind, domain, model_id, data.feature_names)


def permutation_importance(
    model: GradientBoostedTrees,
    data: Dataset,
    domain: str = "valid",
    n_repeats: int = 1,
    seed: int = 0,
    model_id: Optional[str] = None,
) -> GFAResult:
    """Mean increase in risk after permuting each column.

    Permutations come from ``numpy.random.default_rng(seed)``, drawn feature
    by feature and repeat by repeat.
    """
    X, y = _check_inputs(model, data, domain)
    if int(n_repeats) != n_repeats or n_repeats < 1:
        raise ConfigError(f"n_repeats must be an integer >= 1, got {n_repeats}")
    rng = np.random.default_rng(seed)
    base = risk(model, data)
    p = X.shape[1]
    repeats = np.zeros((n_repeats, p))
    Xp = X.copy()
    for k in range(p):
        col = X[:, k]
        for r in range(n_repeats):
            Xp[:, k] = col[rng.permutation(X.shape[0])]
            repeats[r, k] = risk_from_raw(model.raw_predict(Xp), y, model.task) - base
        Xp[:, k] = col
    return GFAResult(
        repeats.mean(axis=0), "permutation", "none", domain, model_id, data.feature_names, repeat_scores=repeats
    )


def compute_gfa(
    model: GradientBoostedTrees,
    family: str,
    data: Dataset,
    domain: str = "valid",
    ifa: IFASource = "predecomp",
    **kwargs,
) -> GFAResult:
    """Dispatch on ``family``; extra keyword arguments go to permutation importance."""
    if family == "tree_inner":
        return tree_inner(model, ifa, data, domain, **kwargs)
    if family == "forest_inner":
        return forest_inner(model, ifa, data, domain, **kwargs)
    if family == "abs":
        return abs_gfa(model, ifa, data, domain, **kwargs)
    if family == "permutation":
        return permutation_importance(model, data, domain, **kwargs)
    raise InvalidInputError(f"unknown GFA family {family!r}; expected one of {FAMILIES}")


class TreeInnerSelector(SelectorMixin, BaseEstimator):
    """Feature selector scoring features with a GFA family on held-out data.

    Fits ``estimator`` on ``(X, y)`` and scores features on ``eval_set``
    (or on the training rows when no evaluation set is given).

    Parameters
    ----------
    estimator : GradientBoostedTrees, default=None
        Unfitted boosted-tree estimator; a standard regressor when None.
    family : {"tree_inner", "forest_inner", "abs", "permutation"}
    ifa : {"predecomp", "saabas_tilde"}
    n_features_to_select : int or None
        Keep this many top-scoring features; None keeps positive scores.

    Attributes
    ----------
    estimator_ : fitted estimator
    scores_ : ndarray of shape (n_features,)
    """

    def __init__(self, estimator=None, family="tree_inner", ifa="predecomp", n_features_to_select=None):
        self.estimator = estimator
        self.family = family
        self.ifa = ifa
        self.n_features_to_select = n_features_to_select

    def fit(self, X, y, eval_set=None):
        est = GBTRegressor() if self.estimator is None else clone(self.estimator)
        est.fit(X, y)
        task = est.task
        if eval_set is None:
            data, domain = Dataset(X, y, task=task), "train"
        else:
            data, domain = Dataset(eval_set[0], eval_set[1], task=task), "valid"
        result = compute_gfa(est, self.family, data, domain, self.ifa)
        self.estimator_ = est
        self.scores_ = result.scores
        self.n_features_in_ = est.n_features_in_
        return self

    def _get_support_mask(self):
        if self.n_features_to_select is None:
            return self.scores_ > 0
        keep = np.argsort(-self.scores_, kind="stable")[: self.n_features_to_select]
        mask = np.zeros(self.scores_.shape[0], dtype=bool)
        mask[keep] = True
        return mask
