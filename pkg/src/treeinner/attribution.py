"""Inner-node values, path attributions and total gain.

Two node-value definitions are supported:

``hat``
    the regularized value ``-eta * sum(G) / (sum(H) + lambda)`` of every node,
    cached at training time (the value a node would take as a leaf);
``tilde``
    the row-count weighted average of the children's values, i.e. the mean
    training output of the tree over the node's rows.

Attributions credit each split on a sample's path with the change in node
value from parent to child.  With ``hat`` values this is PreDecomp; with
``tilde`` values it is the Saabas-style decomposition used by common tree
explainers.  Tree indices are zero-based throughout.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import _kernels
from .data import Dataset, InvalidInputError, ShapeError, check_matrix
from .gbt import GradientBoostedTrees, Tree, grad_hess

logger = logging.getLogger(__name__)

IFA_KINDS = ("predecomp", "saabas_tilde")
_VARIANT_OF = {"predecomp": "hat", "saabas_tilde": "tilde"}


@dataclass(frozen=True)
class NodeValues:
    variant: str
    values: np.ndarray
    tree_index: int
    empty: Optional[np.ndarray] = None

    @property
    def has_empty(self) -> bool:
        return self.empty is not None and bool(self.empty.any())


@dataclass(frozen=True)
class AttributionMatrix:
    """Per-tree contributions ``per_tree[m, i, k]`` and per-tree biases."""

    per_tree: np.ndarray
    bias: np.ndarray
    ifa_kind: str

    @property
    def n_trees(self) -> int:
        return self.per_tree.shape[0]

    def forest(self, upto_m: Optional[int] = None) -> np.ndarray:
        """Forest-level attributions summed over the first ``upto_m`` trees."""
        return self.per_tree[:upto_m].sum(axis=0)


def _check_tree_index(model: GradientBoostedTrees, m: int) -> Tree:
    if not 0 <= m < model.n_trees:
        raise InvalidInputError(f"tree index {m} out of range [0, {model.n_trees})")
    return model.trees_[m]


def _recompute_hat(model, tree: Tree, X, y, raw_before):
    G, H = grad_hess(model.loss, y, raw_before)
    gs, hs, cnt = _kernels.node_sums(X, G, H, tree.feature, tree.threshold, tree.left, tree.right, tree.n_nodes)
    lam = model.config_.reg_lambda
    empty = cnt == 0
    denom = hs + lam
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(empty | (denom <= 0), 0.0, -model.config_.eta * gs / denom)
    return values, cnt, empty


def _tilde_from_counts(tree: Tree, leaf_values: np.ndarray, counts: np.ndarray):
    values = np.where(tree.is_leaf, leaf_values, 0.0)
    empty = counts == 0
    # children always carry larger ids than their parent
    for t in tree.inner_nodes[::-1]:
        a, b = tree.left[t], tree.right[t]
        if counts[t] > 0:
            values[t] = (counts[a] * values[a] + counts[b] * values[b]) / counts[t]
    values[empty] = 0.0
    return values, empty


def _warn_empty(variant, m, empty):
    if empty.any():
        logger.warning(
            "tree %d: %d node(s) have no background rows; %s value set to 0",
            m, int(empty.sum()), variant,
        )


def node_values_hat(model: GradientBoostedTrees, m: int, background: Optional[Dataset] = None) -> NodeValues:
    """Regularized node values of tree ``m``.

    Without ``background`` the training-time cache is returned.  With a
    background dataset the gradients are recomputed at the first ``m`` trees'
    predictions and summed over the background rows in each node.
    """
    tree = _check_tree_index(model, m)
    if background is None:
        return NodeValues("hat", tree.value.copy(), m)
    X = check_matrix(background.features, n_features=model.n_features_in_)
    values, _cnt, empty = _recompute_hat(model, tree, X, background.labels, model.raw_predict(X, m))
    _warn_empty("hat", m, empty)
    return NodeValues("hat", values, m, empty)


def node_values_tilde(model: GradientBoostedTrees, m: int, background: Optional[Dataset] = None) -> NodeValues:
    """Count-weighted average node values of tree ``m``.

    Leaves keep the trained leaf weights; row counts come from the training
    cache or, if given, from ``background``.
    """
    tree = _check_tree_index(model, m)
    if background is None:
        counts = tree.count
    else:
        X = check_matrix(background.features, n_features=model.n_features_in_)
        ones = np.ones(X.shape[0])
        _gs, _hs, counts = _kernels.node_sums(
            X, ones, ones, tree.feature, tree.threshold, tree.left, tree.right, tree.n_nodes
        )
    values, empty = _tilde_from_counts(tree, tree.value, counts)
    if background is not None:
        _warn_empty("tilde", m, empty)
    return NodeValues("tilde", values, m, empty)


def tree_node_values(
    model: GradientBoostedTrees, ifa: str = "predecomp", background: Optional[Dataset] = None
) -> list[np.ndarray]:
    """Node values of every tree for the given IFA kind."""
    if ifa not in IFA_KINDS:
        raise InvalidInputError(f"unknown IFA kind {ifa!r}; expected one of {IFA_KINDS}")
    if ifa == "predecomp":
        if background is None:
            return [t.value for t in model.trees_]
        X = check_matrix(background.features, n_features=model.n_features_in_)
        out = []
        for m, tree, raw in model.staged_raw_before(X):
            values, _cnt, empty = _recompute_hat(model, tree, X, background.labels, raw)
            _warn_empty("hat", m, empty)
            out.append(values)
        return out
    return [node_values_tilde(model, m, background).values for m in range(model.n_trees)]


NodeValueSpec = Union[None, str, Sequence]


def _resolve_node_values(model, node_values: NodeValueSpec) -> tuple[list[np.ndarray], str]:
    if node_values is None or isinstance(node_values, str):
        kind = node_values or "predecomp"
        return tree_node_values(model, kind), kind
    vals = [nv.values if isinstance(nv, NodeValues) else np.asarray(nv, dtype=np.float64) for nv in node_values]
    if len(vals) != model.n_trees:
        raise ShapeError(f"node values given for {len(vals)} trees, model has {model.n_trees}")
    for v, tree in zip(vals, model.trees_):
        if v.shape != (tree.n_nodes,):
            raise ShapeError("node value vector does not match tree size")
    variants = {nv.variant for nv in node_values if isinstance(nv, NodeValues)}
    kind = "saabas_tilde" if variants == {"tilde"} else "predecomp"
    return vals, kind


def tree_contributions(tree: Tree, X: np.ndarray, node_value: np.ndarray) -> np.ndarray:
    """n x p contributions of one tree under the given node values."""
    out = np.zeros(X.shape)
    _kernels.path_contributions(X, tree.feature, tree.threshold, tree.left, tree.right, node_value, out)
    return out


def predecomp(model: GradientBoostedTrees, X, node_values: NodeValueSpec = None) -> AttributionMatrix:
    """Per-tree path attributions; training-cached ``hat`` values by default.

    ``node_values`` may be an IFA kind name or one value vector (or
    :class:`NodeValues`) per tree.
    """
    model._check_fitted()
    X = check_matrix(X, n_features=model.n_features_in_)
    vals, kind = _resolve_node_values(model, node_values)
    per_tree = np.zeros((model.n_trees, X.shape[0], X.shape[1]))
    for m, (tree, v) in enumerate(zip(model.trees_, vals)):
        _kernels.path_contributions(X, tree.feature, tree.threshold, tree.left, tree.right, v, per_tree[m])
    bias = np.array([v[0] for v in vals])
    return AttributionMatrix(per_tree, bias, kind)


def saabas_tilde_ifa(model: GradientBoostedTrees, X, background: Optional[Dataset] = None) -> AttributionMatrix:
    """Path attributions under count-weighted (``tilde``) node values."""
    model._check_fitted()
    vals = [node_values_tilde(model, m, background) for m in range(model.n_trees)]
    return predecomp(model, X, vals)


def total_gain(model: GradientBoostedTrees) -> tuple[np.ndarray, np.ndarray]:
    """Per-tree (M x p) and forest (p) total gain recorded during training."""
    model._check_fitted()
    per_tree = model.per_tree_total_gain_.copy()
    return per_tree, per_tree.sum(axis=0)


def check_training_data(model: GradientBoostedTrees, train: Dataset) -> None:
    """Raise InvalidInputError unless ``train`` reproduces the first tree's caches."""
    model._check_fitted()
    if train.n_features != model.n_features_in_:
        raise InvalidInputError(f"dataset has {train.n_features} features, model expects {model.n_features_in_}")
    tree = model.trees_[0]
    if train.n_samples != tree.count[0]:
        raise InvalidInputError(
            f"dataset has {train.n_samples} rows but the model was trained on {int(tree.count[0])}"
        )
    try:
        G, H = grad_hess(model.loss, train.labels, np.full(train.n_samples, model.base_score_))
    except InvalidInputError as exc:
        raise InvalidInputError(f"labels incompatible with the model: {exc}") from None
    gs, hs, cnt = _kernels.node_sums(
        train.features, G, H, tree.feature, tree.threshold, tree.left, tree.right, tree.n_nodes
    )
    scale = max(1.0, float(np.abs(tree.grad_sum).max()))
    if not np.array_equal(cnt, tree.count) or not np.allclose(gs, tree.grad_sum, rtol=1e-9, atol=1e-9 * scale):
        raise InvalidInputError("dataset does not match the model's training data")


def total_gain_via_inner(model: GradientBoostedTrees, train: Dataset) -> np.ndarray:
    """Per-tree total gain as ``-1/eta * sum_i f_{m,k}(x_i) * G_{i,m}`` over the training rows."""
    check_training_data(model, train)
    X = train.features
    out = np.zeros((model.n_trees, X.shape[1]))
    for m, tree, raw in model.staged_raw_before(X):
        G, _H = grad_hess(model.loss, train.labels, raw)
        _kernels.path_inner(X, G, tree.feature, tree.threshold, tree.left, tree.right, tree.value, out[m])
    return -out / model.config_.eta


def local_accuracy_residual(model: GradientBoostedTrees, X, ifa: str = "predecomp") -> float:
    """max over trees and rows of |f_m(x) - sum_k f_{m,k}(x) - p_m(root)|."""
    model._check_fitted()
    X = check_matrix(X, n_features=model.n_features_in_)
    worst = 0.0
    for tree, v in zip(model.trees_, tree_node_values(model, ifa)):
        contrib = tree_contributions(tree, X, v)
        resid = tree.predict(X) - contrib.sum(axis=1) - v[0]
        worst = max(worst, float(np.abs(resid).max()))
    return worst


def feature_sums(model: GradientBoostedTrees, X, ifa: str = "predecomp") -> np.ndarray:
    """M x p matrix of ``sum_i f_{m,k}(x_i)``."""
    model._check_fitted()
    X = check_matrix(X, n_features=model.n_features_in_)
    ones = np.ones(X.shape[0])
    out = np.zeros((model.n_trees, X.shape[1]))
    for m, (tree, v) in enumerate(zip(model.trees_, tree_node_values(model, ifa))):
        _kernels.path_inner(X, ones, tree.feature, tree.threshold, tree.left, tree.right, v, out[m])
    return out


# export ------------------------------------------------------------------


def export_attributions(attr: AttributionMatrix, path, feature_names: Optional[Sequence[str]] = None) -> Path:
    """Long-form CSV (tree, sample_index, feature, contribution) plus a bias sidecar.

    Exact-zero contributions are omitted, so absent rows mean 0.  The sidecar is written next to ``path`` with suffix ``.bias.json``.
    """
    path = Path(path)
    M, n, p = attr.per_tree.shape
    names = list(feature_names) if feature_names is not None else [f"x{k}" for k in range(p)]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["tree", "sample_index", "feature", "contribution"])
        for m in range(M):
            for i in range(n):
                row = attr.per_tree[m, i]
                for k in np.flatnonzero(row):
                    w.writerow([m, i, names[k], repr(float(row[k]))])
    sidecar = path.with_suffix(".bias.json")
    sidecar.write_text(
        json.dumps({"ifa": attr.ifa_kind, "bias": [float(b) for b in attr.bias]}),
        encoding="utf-8",
    )
    return sidecar


def export_forest(attr: AttributionMatrix, path, feature_names: Optional[Sequence[str]] = None) -> None:
    """n x p CSV of forest-level attributions."""
    forest = attr.forest()
    names = list(feature_names) if feature_names is not None else [f"x{k}" for k in range(forest.shape[1])]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in forest:
            w.writerow([repr(float(v)) for v in row])
