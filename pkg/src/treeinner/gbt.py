"""Second-order gradient boosted regression trees with l2 leaf regularization.

Every tree node caches its regularized value ``-eta * sum(G) / (sum(H) + lambda)``
over the training rows it holds; for leaves this is the leaf weight, for inner
nodes it is the value the node would take if it were a leaf.  Split gains are
accumulated per tree and feature while growing.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.exceptions import NotFittedError

from . import _kernels
from .data import Dataset, InvalidInputError, ShapeError, check_labels, check_matrix

LOSSES = ("squared_error", "logistic")
GAIN_EPS = 1e-12
MIN_HESSIAN = 1e-16

# standard hyperparameter values
STANDARD_PARAMS = {
    "eta": 1e-2,
    "max_depth": 4,
    "min_child_weight": 1.0,
    "num_boost_round": 400,
    "reg_lambda": 1.0,
}


class ConfigError(ValueError):
    """Raised for out-of-range hyperparameters."""


@dataclass(frozen=True)
class TrainConfig:
    eta: float = STANDARD_PARAMS["eta"]
    reg_lambda: float = STANDARD_PARAMS["reg_lambda"]
    max_depth: int = STANDARD_PARAMS["max_depth"]
    min_child_weight: float = STANDARD_PARAMS["min_child_weight"]
    num_boost_round: int = STANDARD_PARAMS["num_boost_round"]
    loss: str = "squared_error"
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise ConfigError(f"eta must be > 0, got {self.eta}")
        if not (math.isfinite(self.reg_lambda) and self.reg_lambda >= 0):
            raise ConfigError(f"reg_lambda must be >= 0, got {self.reg_lambda}")
        if int(self.max_depth) != self.max_depth or self.max_depth < 1:
            raise ConfigError(f"max_depth must be an integer >= 1, got {self.max_depth}")
        if not (math.isfinite(self.min_child_weight) and self.min_child_weight >= 0):
            raise ConfigError(f"min_child_weight must be >= 0, got {self.min_child_weight}")
        if int(self.num_boost_round) != self.num_boost_round or self.num_boost_round < 1:
            raise ConfigError(f"num_boost_round must be an integer >= 1, got {self.num_boost_round}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if int(self.seed) != self.seed or not (-(2**63) <= self.seed < 2**64):
            raise ConfigError(f"seed must be a 64-bit integer, got {self.seed}")
        object.__setattr__(self, "eta", float(self.eta))
        object.__setattr__(self, "reg_lambda", float(self.reg_lambda))
        object.__setattr__(self, "max_depth", int(self.max_depth))
        object.__setattr__(self, "min_child_weight", float(self.min_child_weight))
        object.__setattr__(self, "num_boost_round", int(self.num_boost_round))
        object.__setattr__(self, "seed", int(self.seed))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def grad_hess(loss: str, y, raw):
    """Gradient and hessian of the loss w.r.t. the raw score.

    Works elementwise on scalars or arrays.  Squared error uses
    ``L = (y - raw)^2 / 2``.
    """
    y = np.asarray(y, dtype=np.float64)
    raw = np.asarray(raw, dtype=np.float64)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(raw))):
        raise InvalidInputError("grad_hess requires finite labels and raw scores")
    if loss == "squared_error":
        g = raw - y
        h = np.ones_like(g)
    elif loss == "logistic":
        if not np.all((y == 0.0) | (y == 1.0)):
            raise InvalidInputError("logistic loss requires labels in {0, 1}")
        prob = expit(raw)
        g = prob - y
        h = np.maximum(prob * (1.0 - prob), MIN_HESSIAN)
    else:
        raise ConfigError(f"unknown loss {loss!r}")
    if g.ndim == 0:
        return float(g), float(h)
    return g, h


def split_gain(GL: float, HL: float, GR: float, HR: float, reg_lambda: float) -> float:
    """Loss reduction of a split under the second-order objective."""

    def term(g, h):
        d = h + reg_lambda
        return 0.0 if d <= 0 else g * g / d

    return term(GL, HL) + term(GR, HR) - term(GL + GR, HL + HR)


@dataclass(frozen=True, eq=False)
class Tree:
    """One regression tree as flat node arrays (breadth-first ids, root 0).

    ``value`` holds the cached regularized node value for every node; on
    leaves it is the leaf weight.  ``gain`` is zero on leaves.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    grad_sum: np.ndarray
    count: np.ndarray
    gain: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            getattr(self, f.name).setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature == _kernels.LEAF

    @property
    def inner_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.is_leaf)

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.is_leaf)

    @property
    def weight(self) -> np.ndarray:
        """Leaf weights (NaN on inner nodes)."""
        return np.where(self.is_leaf, self.value, np.nan)

    def parents(self) -> np.ndarray:
        par = np.full(self.n_nodes, -1, dtype=np.int64)
        inner = self.inner_nodes
        par[self.left[inner]] = inner
        par[self.right[inner]] = inner
        return par

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _kernels.apply_tree(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(X.shape[0])
        _kernels.predict_tree(X, self.feature, self.threshold, self.left, self.right, self.value, out)
        return out

    def gain_by_feature(self, n_features: int) -> np.ndarray:
        inner = self.inner_nodes
        out = np.zeros(n_features)
        # sequential accumulation in node order keeps sums reproducible
        for t in inner:
            out[self.feature[t]] += self.gain[t]
        return out

    def to_dict(self) -> dict:
        leaf = self.is_leaf
        return {
            "kind": ["leaf" if b else "inner" for b in leaf],
            "feature": [None if b else int(f) for b, f in zip(leaf, self.feature)],
            "threshold": [None if b else float(v) for b, v in zip(leaf, self.threshold)],
            "left": [None if b else int(v) for b, v in zip(leaf, self.left)],
            "right": [None if b else int(v) for b, v in zip(leaf, self.right)],
            "weight": [float(v) if b else None for b, v in zip(leaf, self.value)],
            "p_hat": [float(v) for v in self.value],
            "cover": [float(v) for v in self.cover],
            "grad_sum": [float(v) for v in self.grad_sum],
            "count": [int(v) for v in self.count],
            "gain": [float(v) for v in self.gain],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        leaf = np.array([k == "leaf" for k in d["kind"]])

        def ints(key):
            return np.array([-1 if v is None else v for v in d[key]], dtype=np.int64)

        feature = ints("feature")
        feature[leaf] = _kernels.LEAF
        threshold = np.array([0.0 if v is None else v for v in d["threshold"]], dtype=np.float64)
        return cls(
            feature=feature,
            threshold=threshold,
            left=ints("left"),
            right=ints("right"),
            value=np.array(d["p_hat"], dtype=np.float64),
            cover=np.array(d["cover"], dtype=np.float64),
            grad_sum=np.array(d["grad_sum"], dtype=np.float64),
            count=np.array(d["count"], dtype=np.int64),
            gain=np.array(d["gain"], dtype=np.float64),
        )


def sort_columns(X: np.ndarray) -> np.ndarray:
    """Row order per feature, stable so equal values keep row order."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable"))


def grow_tree(data, G, H, config: TrainConfig, order: Optional[np.ndarray] = None) -> Tree:
    """Grow one tree by exact greedy search on gradients ``G`` and hessians ``H``.

    ``data`` may be a :class:`Dataset` or a feature matrix.  Candidate
    thresholds are midpoints between consecutive distinct values and rows with
    ``x < threshold`` go left.  Ties in gain go to the lowest feature index,
    then the smallest threshold.
    """
    X = data.features if isinstance(data, Dataset) else check_matrix(data)
    G = np.ascontiguousarray(G, dtype=np.float64)
    H = np.ascontiguousarray(H, dtype=np.float64)
    n = X.shape[0]
    if n == 0:
        raise InvalidInputError("cannot grow a tree on an empty dataset")
    if G.shape != (n,) or H.shape != (n,):
        raise ShapeError(f"G and H must have length {n}")
    if not (np.all(np.isfinite(G)) and np.all(H > 0)):
        raise InvalidInputError("G must be finite and H strictly positive")
    if order is None:
        order = sort_columns(X)
    arrays = _kernels.grow_tree(
        X,
        order,
        G,
        H,
        config.eta,
        config.reg_lambda,
        config.max_depth,
        config.min_child_weight,
        GAIN_EPS,
    )
    feature, threshold, left, right, value, cover, grad_sum, count, gain, _depth = arrays
    return Tree(feature, threshold, left, right, value, cover, grad_sum, count, gain)


class GradientBoostedTrees(BaseEstimator):
    """Base class for the boosted-tree estimators.

    Parameters
    ----------
    eta : float, default=0.01
        Learning rate (shrinkage) applied to every node value.
    reg_lambda : float, default=1.0
        l2 penalty on leaf weights.
    max_depth : int, default=4
        Maximum tree depth; the root is depth 0.
    min_child_weight : float, default=1.0
        Minimum hessian sum required in each child of a split.
    num_boost_round : int, default=400
        Number of trees.
    seed : int, default=0
        Recorded for provenance.  Training itself uses no randomness.

    Attributes
    ----------
    trees_ : list of Tree
    base_score_ : float
        Initial raw prediction, always 0.
    per_tree_total_gain_ : ndarray of shape (num_boost_round, n_features)
        Split gains summed per tree and feature at training time.
    n_features_in_ : int
    """

    _loss = "squared_error"
    _task = "regression"

    def __init__(
        self,
        eta=STANDARD_PARAMS["eta"],
        reg_lambda=STANDARD_PARAMS["reg_lambda"],
        max_depth=STANDARD_PARAMS["max_depth"],
        min_child_weight=STANDARD_PARAMS["min_child_weight"],
        num_boost_round=STANDARD_PARAMS["num_boost_round"],
        seed=0,
    ):
        self.eta = eta
        self.reg_lambda = reg_lambda
        self.max_depth = max_depth
        self.min_child_weight = min_child_weight
        self.num_boost_round = num_boost_round
        self.seed = seed

    @property
    def loss(self) -> str:
        return self._loss

    @property
    def task(self) -> str:
        return self._task

    def _config(self) -> TrainConfig:
        return TrainConfig(
            eta=self.eta,
            reg_lambda=self.reg_lambda,
            max_depth=self.max_depth,
            min_child_weight=self.min_child_weight,
            num_boost_round=self.num_boost_round,
            loss=self._loss,
            seed=self.seed,
        )

    def fit(self, X, y):
        config = self._config()
        X = check_matrix(X)
        y = check_labels(y, X.shape[0], binary=self._loss == "logistic")
        order = sort_columns(X)
        raw = np.zeros(X.shape[0])
        trees = []
        gains = np.zeros((config.num_boost_round, X.shape[1]))
        for m in range(config.num_boost_round):
            G, H = grad_hess(config.loss, y, raw)
            tree = grow_tree(X, G, H, config, order=order)
            _kernels.predict_tree(X, tree.feature, tree.threshold, tree.left, tree.right, tree.value, raw)
            gains[m] = tree.gain_by_feature(X.shape[1])
            trees.append(tree)
        self.config_ = config
        self.trees_ = trees
        self.base_score_ = 0.0
        self.per_tree_total_gain_ = gains
        self.n_features_in_ = X.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "trees_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    @property
    def n_trees(self) -> int:
        self._check_fitted()
        return len(self.trees_)

    def raw_predict(self, X, upto_m: Optional[int] = None) -> np.ndarray:
        """Base score plus the outputs of the first ``upto_m`` trees."""
        self._check_fitted()
        X = check_matrix(X, n_features=self.n_features_in_)
        if upto_m is None:
            upto_m = len(self.trees_)
        if not 0 <= upto_m <= len(self.trees_):
            raise InvalidInputError(f"upto_m must be in [0, {len(self.trees_)}], got {upto_m}")
        out = np.full(X.shape[0], self.base_score_)
        for tree in self.trees_[:upto_m]:
            _kernels.predict_tree(X, tree.feature, tree.threshold, tree.left, tree.right, tree.value, out)
        return out

    def staged_raw_before(self, X) -> Iterator[tuple[int, "Tree", np.ndarray]]:
        """Yield ``(m, tree_m, f_[m-1](X))`` for m = 0..M-1 (zero-based trees).

        The yielded array is reused; copy it if it must outlive the step.
        """
        self._check_fitted()
        X = check_matrix(X, n_features=self.n_features_in_)
        raw = np.full(X.shape[0], self.base_score_)
        for m, tree in enumerate(self.trees_):
            yield m, tree, raw
            _kernels.predict_tree(X, tree.feature, tree.threshold, tree.left, tree.right, tree.value, raw)

    def total_gain(self) -> np.ndarray:
        self._check_fitted()
        return self.per_tree_total_gain_.sum(axis=0)

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        self._check_fitted()
        return {
            "format": "treeinner-gbt",
            "version": 1,
            "config": self.config_.to_dict(),
            "base_score": float(self.base_score_),
            "n_features": int(self.n_features_in_),
            "trees": [
                dict(t.to_dict(), per_feature_gain=[float(v) for v in g])
                for t, g in zip(self.trees_, self.per_tree_total_gain_)
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), allow_nan=False), encoding="utf-8")


class GBTRegressor(RegressorMixin, GradientBoostedTrees):
    """Boosted regression trees under squared error."""

    def predict(self, X, upto_m: Optional[int] = None) -> np.ndarray:
        return self.raw_predict(X, upto_m)


class GBTClassifier(ClassifierMixin, GradientBoostedTrees):
    """Binary boosted trees under logistic loss; labels must be 0/1."""

    _loss = "logistic"
    _task = "classification"

    def fit(self, X, y):
        super().fit(X, y)
        self.classes_ = np.array([0.0, 1.0])
        return self

    def decision_function(self, X, upto_m: Optional[int] = None) -> np.ndarray:
        return self.raw_predict(X, upto_m)

    def predict_proba(self, X, upto_m: Optional[int] = None) -> np.ndarray:
        prob = expit(self.raw_predict(X, upto_m))
        return np.column_stack([1.0 - prob, prob])

    def predict(self, X, upto_m: Optional[int] = None) -> np.ndarray:
        # probability exactly 0.5 goes to class 1
        return (expit(self.raw_predict(X, upto_m)) >= 0.5).astype(np.float64)


GBTModel = GradientBoostedTrees


def estimator_for(config: TrainConfig) -> GradientBoostedTrees:
    cls = GBTRegressor if config.loss == "squared_error" else GBTClassifier
    return cls(
        eta=config.eta,
        reg_lambda=config.reg_lambda,
        max_depth=config.max_depth,
        min_child_weight=config.min_child_weight,
        num_boost_round=config.num_boost_round,
        seed=config.seed,
    )


def fit(train: Dataset, config: TrainConfig) -> GradientBoostedTrees:
    """Fit a boosted model on ``train`` under ``config``."""
    if config.loss == "logistic" and train.task != "classification":
        check_labels(train.labels, train.n_samples, binary=True)
    return estimator_for(config).fit(train.features, train.labels)


def predict(model: GradientBoostedTrees, X, upto_m: Optional[int] = None) -> np.ndarray:
    """Raw scores of the first ``upto_m`` trees (all trees by default)."""
    return model.raw_predict(X, upto_m)


def model_from_dict(d: dict) -> GradientBoostedTrees:
    if d.get("format") != "treeinner-gbt":
        raise InvalidInputError("not a treeinner model document")
    config = TrainConfig.from_dict(d["config"])
    model = estimator_for(config)
    trees = [Tree.from_dict(t) for t in d["trees"]]
    p = int(d["n_features"])
    gains = np.array([t["per_feature_gain"] for t in d["trees"]], dtype=np.float64).reshape(len(trees), p)
    model.config_ = config
    model.trees_ = trees
    model.base_score_ = float(d["base_score"])
    model.per_tree_total_gain_ = gains
    model.n_features_in_ = p
    if isinstance(model, GBTClassifier):
        model.classes_ = np.array([0.0, 1.0])
    return model


def load_model(path) -> GradientBoostedTrees:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: malformed model JSON ({exc})") from None
    return model_from_dict(doc)
