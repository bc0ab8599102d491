"""Benchmark data for noisy-feature identification and additive recovery."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import integrate
from scipy.special import expit

from .data import Dataset, InvalidInputError

logger = logging.getLogger(__name__)

N_RELEVANT = 5
SIM_FEATURES = 50
SIM_POOL = 10
NOISE_VAR_FACTOR = 100.0


@dataclass(frozen=True)
class AdditiveComponent:
    """Univariate function on [0, 1] shifted to have zero mean under U(0, 1)."""

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    mean: float

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=np.float64)) - self.mean


_NAMED = {
    "zero": (lambda x: np.zeros_like(x), 0.0),
    "linear": (lambda x: x, 0.5),
    "square": (lambda x: x * x, 1.0 / 3.0),
    "sin": (lambda x: np.sin(2.0 * np.pi * x), 0.0),
    "step": (lambda x: (x >= 0.5).astype(np.float64), 0.5),
    "exp": (lambda x: np.exp(x), np.e - 1.0),
}


def make_component(spec: Union[str, Callable, AdditiveComponent]) -> AdditiveComponent:
    """Build a centered component from a name, a callable, or a component.

    Callables are centered by their mean over U(0, 1), computed by quadrature.
    """
    if isinstance(spec, AdditiveComponent):
        return spec
    if isinstance(spec, str):
        if spec not in _NAMED:
            raise InvalidInputError(f"unknown component {spec!r}; known: {sorted(_NAMED)}")
        fn, mean = _NAMED[spec]
        return AdditiveComponent(spec, fn, mean)
    if callable(spec):
        mean, _err = integrate.quad(lambda t: float(spec(np.array(t))), 0.0, 1.0)
        return AdditiveComponent(getattr(spec, "__name__", "custom"), spec, mean)
    raise InvalidInputError(f"cannot build an additive component from {spec!r}")


@dataclass(frozen=True)
class GroundTruth:
    relevant: tuple
    task: str
    n_features: int
    noise_sd: float
    signal_var: float
    variance_method: str
    seed: Optional[int] = None
    additive_components: Optional[tuple] = field(default=None, compare=False)

    def relevance(self) -> np.ndarray:
        r = np.zeros(self.n_features, dtype=np.int64)
        r[list(self.relevant)] = 1
        return r

    def noisy(self) -> np.ndarray:
        return np.flatnonzero(self.relevance() == 0)

    def to_dict(self) -> dict:
        d = {
            "relevant": [int(j) for j in self.relevant],
            "task": self.task,
            "n_features": self.n_features,
            "noise_sd": self.noise_sd,
            "signal_var": self.signal_var,
            "variance_method": self.variance_method,
            "seed": self.seed,
        }
        if self.additive_components is not None:
            d["additive_components"] = [c.name for c in self.additive_components]
        return d

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")


def _check_task(task):
    if task not in ("regression", "classification"):
        raise InvalidInputError(f"task must be 'regression' or 'classification', got {task!r}")


def simulated_signal_variance(relevant_one_based: Sequence[int]) -> float:
    """Variance of ``(1/5) * sum_j x_j / j`` with x_j uniform on {0..j}.

    Var(x_j) = j(j+2)/12, so each term contributes (j+2)/(12 j) / 25.
    """
    js = np.asarray(relevant_one_based, dtype=np.float64)
    return float(np.sum((js + 2.0) / (12.0 * js)) / len(js) ** 2)


def _labels(signal_logit_or_mean, task, rng, noise_sd):
    if task == "regression":
        return signal_logit_or_mean + rng.normal(0.0, noise_sd, size=signal_logit_or_mean.shape)
    return (rng.random(signal_logit_or_mean.shape) < expit(signal_logit_or_mean)).astype(np.float64)


def gen_simulated(
    n_train: int = 1000,
    n_valid: int = 1000,
    task: str = "regression",
    seed: Optional[int] = 0,
    rng: Optional[np.random.Generator] = None,
) -> tuple[Dataset, Dataset, GroundTruth]:
    """Discrete-feature benchmark: 50 features, feature j uniform on {0..j}.

    Five relevant features are drawn from the first ten.  Train and valid rows
    come from one stream (train first).
    """
    _check_task(task)
    if n_train < 1 or n_valid < 1:
        raise InvalidInputError("n_train and n_valid must be >= 1")
    rng = np.random.default_rng(seed) if rng is None else rng
    relevant = np.sort(rng.choice(SIM_POOL, size=N_RELEVANT, replace=False))
    n = n_train + n_valid
    highs = np.arange(1, SIM_FEATURES + 1)
    X = rng.integers(0, highs + 1, size=(n, SIM_FEATURES)).astype(np.float64)
    js = relevant + 1
    scaled = X[:, relevant] / js
    if task == "regression":
        var = simulated_signal_variance(js)
        noise_sd = float(np.sqrt(NOISE_VAR_FACTOR * var))
        y = _labels(scaled.sum(axis=1) / N_RELEVANT, task, rng, noise_sd)
    else:
        var, noise_sd = 0.0, 0.0
        y = _labels(2.0 / N_RELEVANT * scaled.sum(axis=1) - 1.0, task, rng, 0.0)
    names = [f"x{j}" for j in range(1, SIM_FEATURES + 1)]
    truth = GroundTruth(tuple(int(j) for j in relevant), task, SIM_FEATURES, noise_sd, var, "analytic", seed)
    train = Dataset(X[:n_train], y[:n_train], names, task)
    valid = Dataset(X[n_train:], y[n_train:], names, task)
    return train, valid, truth


def minmax_scale(X: np.ndarray) -> np.ndarray:
    """Scale columns to [0, 1]; constant columns become zeros."""
    X = np.asarray(X, dtype=np.float64)
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    const = span == 0
    if const.any():
        logger.warning("%d constant column(s) scaled to zeros: %s", int(const.sum()), np.flatnonzero(const).tolist())
    out = np.zeros_like(X)
    ok = ~const
    out[:, ok] = (X[:, ok] - lo[ok]) / span[ok]
    return out


def chip_pipeline(
    raw: Union[Dataset, np.ndarray],
    task: str = "regression",
    seed: Optional[int] = 0,
    n_train: Optional[int] = None,
    feature_names: Optional[Sequence[str]] = None,
    rng: Optional[np.random.Generator] = None,
) -> tuple[Dataset, Dataset, GroundTruth]:
    """Semi-synthetic benchmark over a real feature table.

    Scales columns to [0, 1], draws five relevant columns, permutes every
    other column independently over the whole table, synthesizes labels from
    the relevant columns and splits rows at random into train and valid
    (``n_train`` rows, default half).  Any labels on ``raw`` are ignored.
    """
    _check_task(task)
    if isinstance(raw, Dataset):
        feature_names = raw.feature_names if feature_names is None else feature_names
        table = np.array(raw.features)
    else:
        table = np.array(raw, dtype=np.float64)
    if table.ndim != 2 or table.shape[1] < N_RELEVANT + 1 or table.shape[0] < 2:
        raise InvalidInputError(f"need at least 2 rows and {N_RELEVANT + 1} columns, got shape {table.shape}")
    if not np.all(np.isfinite(table)):
        raise InvalidInputError("table contains non-finite values")
    n, p = table.shape
    n_train = n // 2 if n_train is None else int(n_train)
    if not 1 <= n_train < n:
        raise InvalidInputError(f"n_train must be in [1, {n - 1}], got {n_train}")
    rng = np.random.default_rng(seed) if rng is None else rng

    X = minmax_scale(table)
    relevant = np.sort(rng.choice(p, size=N_RELEVANT, replace=False))
    for j in range(p):
        if j not in relevant:
            X[:, j] = X[rng.permutation(n), j]
    signal = X[:, relevant].sum(axis=1)
    if task == "regression":
        var = float(np.var(signal / N_RELEVANT))
        noise_sd = float(np.sqrt(NOISE_VAR_FACTOR * var))
        y = _labels(signal / N_RELEVANT, task, rng, noise_sd)
    else:
        var, noise_sd = 0.0, 0.0
        y = _labels(2.0 / N_RELEVANT * signal - 1.0, task, rng, 0.0)
    rows = rng.permutation(n)
    tr, va = rows[:n_train], rows[n_train:]
    truth = GroundTruth(tuple(int(j) for j in relevant), task, p, noise_sd, var, "empirical", seed)
    return (
        Dataset(X[tr], y[tr], feature_names, task),
        Dataset(X[va], y[va], feature_names, task),
        truth,
    )


def gen_additive(
    n: int,
    components: Sequence[Union[str, Callable, AdditiveComponent]],
    seed: Optional[int] = 0,
    noise_sd: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> tuple[Dataset, GroundTruth]:
    """Independent U(0, 1) features with ``y = sum_k h_k(x_k) + noise``."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    comps = tuple(make_component(c) for c in components)
    if not comps:
        raise InvalidInputError("need at least one component")
    rng = np.random.default_rng(seed) if rng is None else rng
    X = rng.random((n, len(comps)))
    y = np.zeros(n)
    for k, h in enumerate(comps):
        y += h(X[:, k])
    if noise_sd > 0:
        y += rng.normal(0.0, noise_sd, size=n)
    relevant = tuple(k for k, c in enumerate(comps) if c.name != "zero")
    signal_var = float(np.var(y))
    truth = GroundTruth(relevant, "regression", len(comps), float(noise_sd), signal_var, "empirical", seed, comps)
    return Dataset(X, y, task="regression"), truth
