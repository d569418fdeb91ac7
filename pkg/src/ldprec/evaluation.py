"""Accuracy metrics and k-fold splitting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_THRESHOLDS = {"movielens": 4.0, "jester": 4.0, "libimseti": 7.0}


def rmse(actual, predicted) -> float:
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.size == 0:
        raise ValueError("rmse of an empty set is undefined")
    if actual.shape != predicted.shape:
        raise ValueError("actual and predicted differ in shape")
    return float(np.sqrt(np.mean((actual - predicted) ** 2)))


@dataclass(frozen=True)
class ConfusionCounts:
    """Recommendation outcomes. Positive predictions are the top-k items per user."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("counts must be nonnegative")

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self):
        return self.tp + self.fp + self.fn + self.tn

    @property
    def precision(self) -> float:
        denom = self.tp + self.fp
        return self.tp / denom if denom else 0.0

    @property
    def recall_defined(self) -> bool:
        return self.tp + self.fn > 0

    @property
    def recall(self) -> float:
        """0.0 when there are no relevant items (see ``recall_defined``)."""
        return self.tp / (self.tp + self.fn) if self.recall_defined else 0.0


def f_score(c: ConfusionCounts) -> float:
    p, r = c.precision, c.recall
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def top_k_confusion(users, actual, predicted, k: int = 10,
                    relevance_threshold: float = 4.0) -> ConfusionCounts:
    """Pool per-user top-k decisions over all users.

    For each user the ``k`` held-out items with the highest predicted score
    are the recommended ones (all of them if the user has fewer than ``k``);
    an item is relevant when its actual rating reaches ``relevance_threshold``.
    Ties in the predicted score go to the earlier entry.
    """
    users = np.asarray(users)
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if not (users.shape == actual.shape == predicted.shape):
        raise ValueError("users, actual and predicted must align")
    if users.size == 0:
        return ConfusionCounts()
    order = np.lexsort((np.arange(users.size), -predicted, users))
    su = users[order]
    starts = np.flatnonzero(np.r_[True, su[1:] != su[:-1]])
    group_start = np.repeat(starts, np.diff(np.r_[starts, su.size]))
    rank = np.arange(su.size) - group_start
    recommended = rank < k
    relevant = actual[order] >= relevance_threshold
    return ConfusionCounts(
        tp=int(np.sum(recommended & relevant)),
        fp=int(np.sum(recommended & ~relevant)),
        fn=int(np.sum(~recommended & relevant)),
        tn=int(np.sum(~recommended & ~relevant)),
    )


@dataclass(frozen=True)
class FoldPlan:
    assignments: np.ndarray
    n_folds: int
    seed: int

    def test_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.n_folds)


def make_folds(R, folds: int = 10, seed: int = 0) -> FoldPlan:
    """Random balanced partition of the observed entries (sizes differ by at most one)."""
    n = len(R)
    if folds < 2:
        raise ValueError("need at least two folds")
    if n < folds:
        raise ValueError(f"{n} ratings cannot fill {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=np.int64)
    assignments[perm] = np.arange(n) % folds
    return FoldPlan(assignments, folds, seed)
