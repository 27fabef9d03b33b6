"""Ranking and probabilistic evaluation: AUC and binary cross-entropy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Probabilities are clipped into [PROB_CLIP, 1 - PROB_CLIP] before taking logs
# so that fully confident predictions yield a finite loss.
PROB_CLIP = 1e-7


class SingleClassError(ValueError):
    """Labels contain only one class where both are required."""


@dataclass(frozen=True)
class EvalResult:
    auc: float
    logloss: float
    n_pos: int
    n_neg: int

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "logloss": self.logloss,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
        }


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ValueError("inputs must be 1-d sequences of equal length")
    if x.size == 0:
        raise ValueError("inputs must be non-empty")
    return x, y


def auc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic.

    Tied scores receive average ranks, which is equivalent to pairwise
    concordance counting with half credit per tied positive/negative pair.
    """
    s, y = _check_pair(scores, labels)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("labels must be 0 or 1")
    n_pos = int(np.sum(y == 1.0))
    n_neg = int(np.sum(y == 0.0))
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUC requires at least one positive and one negative")
    ranks = _average_ranks(s)
    pos_rank_sum = float(ranks[y == 1.0].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _average_ranks(s: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank range."""
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and s[order[j + 1]] == s[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def logloss(probs, labels) -> float:
    """Mean binary cross-entropy, probabilities clipped away from {0, 1}."""
    p, y = _check_pair(probs, labels)
    p = np.clip(p, PROB_CLIP, 1.0 - PROB_CLIP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def evaluate(scores, labels) -> EvalResult:
    """AUC + logloss + class counts for one scored dataset."""
    _, y = _check_pair(scores, labels)
    return EvalResult(
        auc=auc(scores, labels),
        logloss=logloss(scores, labels),
        n_pos=int(np.sum(y == 1.0)),
        n_neg=int(np.sum(y == 0.0)),
    )
