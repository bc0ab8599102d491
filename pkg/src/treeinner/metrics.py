"""AUC for noisy-feature identification, risk and score normalizations."""

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata


class UndefinedAUCError(ValueError):
    """Raised when only one relevance class is present."""


def auc(scores, relevance) -> float:
    """Mann-Whitney AUC of ``scores`` separating relevance 1 from relevance 0.

    Ties between a relevant and a noisy feature count one half.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    relevance = np.asarray(relevance).ravel()
    if scores.shape != relevance.shape:
        raise ValueError("scores and relevance must have the same length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    pos = relevance == 1
    neg = relevance == 0
    if not np.all(pos | neg):
        raise ValueError("relevance must be 0/1")
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC needs both relevant and noisy features")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_bruteforce(scores, relevance) -> float:
    """Reference AUC by enumerating every (relevant, noisy) pair."""
    scores = np.asarray(scores, dtype=np.float64)
    relevance = np.asarray(relevance)
    pos = scores[relevance == 1]
    neg = scores[relevance == 0]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedAUCError("AUC needs both relevant and noisy features")
    wins = 0.0
    for a in pos:
        for b in neg:
            if a > b:
                wins += 1.0
            elif a == b:
                wins += 0.5
    return wins / (pos.size * neg.size)


def normalize_l1(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    s = np.abs(v).sum()
    if not s > 0:
        raise ValueError("cannot l1-normalize a zero vector")
    return v / s


def normalize_l2(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    s = np.sqrt(np.dot(v, v))
    if not s > 0:
        raise ValueError("cannot l2-normalize a zero vector")
    return v / s


def risk_from_raw(raw, y, task: str) -> float:
    """MSE of raw scores (regression) or 0.5-threshold error rate (classification)."""
    raw = np.asarray(raw, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if task == "regression":
        return float(np.mean((raw - y) ** 2))
    if task == "classification":
        pred = (expit(raw) >= 0.5).astype(np.float64)
        return float(np.mean(pred != y))
    raise ValueError(f"unknown task {task!r}")


def risk(model, data) -> float:
    """Held-out risk of ``model`` on a labelled :class:`~treeinner.data.Dataset`."""
    return risk_from_raw(model.raw_predict(data.features), data.labels, model.task)
