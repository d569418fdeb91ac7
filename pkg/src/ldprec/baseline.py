"""Plain matrix factorization by SGD and an imputed truncated-SVD predictor."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .data import SparseRatingMatrix
from .errors import DivergenceError

FILL_STRATEGIES = ("global", "user", "item")


@dataclass
class MFModel:
    U: np.ndarray
    V: np.ndarray
    info: dict = field(default_factory=dict)

    @property
    def latent_dim(self):
        return self.U.shape[1]


@njit(cache=True)
def _sgd_epoch(users, items, ratings, order, U, V, lr, reg):  # pragma: no cover - compiled
    d = U.shape[1]
    for e in order:
        i = users[e]
        j = items[e]
        err = ratings[e] - np.dot(U[i], V[j])
        for k in range(d):
            uk = U[i, k]
            U[i, k] += lr * (err * V[j, k] - reg * uk)
            V[j, k] += lr * (err * uk - reg * V[j, k])


def _train_sse(R, U, V):
    res = R.ratings - np.einsum("ij,ij->i", U[R.users], V[R.items])
    return float(res @ res)


def fit_mf_sgd(R: SparseRatingMatrix, d: int = 20, learning_rate: float = 0.005,
               epochs: int = 100, rng=None, reg: float = 0.0,
               init_scale: float = 0.1) -> MFModel:
    """Minimize ``sum (r_ij - u_i . v_j)^2`` (plus optional ``reg``) by per-rating SGD.

    Entries are visited in a fresh shuffled order every epoch, drawn from
    ``rng``. ``info["train_rmse"]`` holds the training RMSE before the first
    epoch and after each one.
    """
    if len(R) == 0:
        raise ValueError("cannot fit on an empty rating matrix")
    rng = np.random.default_rng(rng)
    U = rng.normal(0.0, init_scale, (R.num_users, d))
    V = rng.normal(0.0, init_scale, (R.num_items, d))
    sse0 = _train_sse(R, U, V)
    history = [np.sqrt(sse0 / len(R))]
    users = np.ascontiguousarray(R.users)
    items = np.ascontiguousarray(R.items)
    ratings = np.ascontiguousarray(R.ratings)
    for _ in range(epochs):
        _sgd_epoch(users, items, ratings, rng.permutation(len(R)), U, V, learning_rate, reg)
        sse = _train_sse(R, U, V)
        if not np.isfinite(sse) or sse > 10 * sse0:
            raise DivergenceError(
                f"training error grew from {sse0:.4g} to {sse:.4g}; lower the learning rate"
            )
        history.append(np.sqrt(sse / len(R)))
    return MFModel(U, V, {"train_rmse": history, "epochs": epochs, "learning_rate": learning_rate,
                          "reg": reg})


def impute(R: SparseRatingMatrix, fill_strategy: str = "global") -> np.ndarray:
    """Dense matrix with missing cells filled by the global, user or item mean."""
    if fill_strategy not in FILL_STRATEGIES:
        raise ValueError(f"fill_strategy must be one of {FILL_STRATEGIES}")
    gm = R.global_mean()
    if fill_strategy == "global":
        dense = np.full(R.shape, gm)
    else:
        rows = R.users if fill_strategy == "user" else R.items
        n = R.num_users if fill_strategy == "user" else R.num_items
        sums = np.bincount(rows, R.ratings, minlength=n)
        counts = np.bincount(rows, minlength=n)
        means = np.where(counts > 0, sums / np.maximum(counts, 1), gm)
        dense = np.repeat(means[:, None], R.num_items, 1) if fill_strategy == "user" \
            else np.repeat(means[None, :], R.num_users, 0)
    dense[R.users, R.items] = R.ratings
    return dense


def fit_svd(R: SparseRatingMatrix, d: int = 20, fill_strategy: str = "global") -> MFModel:
    """Rank-``d`` truncated SVD of the mean-imputed rating matrix.

    The singular values are split evenly between the factors
    (``U = P sqrt(S)``, ``V = Q sqrt(S)``).
    """
    if len(R) == 0:
        raise ValueError("cannot fit on an empty rating matrix")
    P, s, Qt = np.linalg.svd(impute(R, fill_strategy), full_matrices=False)
    d = min(d, s.size)
    root = np.sqrt(s[:d])
    return MFModel(P[:, :d] * root, Qt[:d].T * root,
                   {"fill_strategy": fill_strategy, "singular_values": s[:d]})
