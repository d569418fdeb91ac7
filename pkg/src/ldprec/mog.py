"""Matrix factorization with a zero-mean Mixture-of-Gaussians noise model, fit by EM.

Each perturbed rating is modelled as ``r*_ij = u_i . v_j + n_ij`` with
``n_ij ~ sum_k pi_k N(0, sigma2_k)``. One EM round updates the mixture
(weights and variances), then the factors by weighted alternating least
squares with cell weights ``sum_k gamma_ijk / (2 sigma2_k)``, then the
responsibilities.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from numba import njit
from scipy.special import logsumexp

from .data import SparseRatingMatrix
from .domain import RatingDomain

log = logging.getLogger(__name__)

LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class FitConfig:
    n_components: int = 3
    latent_dim: int = 20
    max_iters: int = 100
    tol: float = 1e-4
    variance_floor: float = 1e-6
    inner_iters: int = 1
    ridge: float = 0.0
    jitter: float = 1e-9
    init_scale: float = 0.1
    center: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_components < 1 or self.latent_dim < 1:
            raise ValueError("n_components and latent_dim must be >= 1")
        if not self.tol > 0 or not self.variance_floor > 0:
            raise ValueError("tol and variance_floor must be positive")
        if self.max_iters < 0 or self.inner_iters < 1 or self.ridge < 0:
            raise ValueError("bad iteration counts or ridge")


@dataclass
class MoGMFModel:
    U: np.ndarray
    V: np.ndarray
    pi: np.ndarray
    sigma2: np.ndarray
    offset: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def latent_dim(self):
        return self.U.shape[1]

    @property
    def n_components(self):
        return self.pi.size


class MixtureUpdate(NamedTuple):
    pi: np.ndarray
    sigma2: np.ndarray
    reinitialized: tuple


def residuals(R: SparseRatingMatrix, U, V, offset: float = 0.0) -> np.ndarray:
    return R.ratings - offset - np.einsum("ij,ij->i", U[R.users], V[R.items])


def _component_log_density(res, pi, sigma2):
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    return log_pi - 0.5 * (LOG_2PI + np.log(sigma2)) - res[:, None] ** 2 / (2 * sigma2)


def e_step(R: SparseRatingMatrix, model: MoGMFModel) -> np.ndarray:
    """Posterior responsibilities, shape ``(len(R), K)``; rows sum to one."""
    logp = _component_log_density(residuals(R, model.U, model.V, model.offset), model.pi, model.sigma2)
    return np.exp(logp - logsumexp(logp, axis=1, keepdims=True))


def log_likelihood(R: SparseRatingMatrix, model: MoGMFModel) -> float:
    if len(R) == 0:
        return 0.0
    logp = _component_log_density(residuals(R, model.U, model.V, model.offset), model.pi, model.sigma2)
    return float(logsumexp(logp, axis=1).sum())


def m_step_mixture(R: SparseRatingMatrix, model: MoGMFModel, gamma: np.ndarray,
                   variance_floor: float = 1e-6) -> MixtureUpdate:
    """Re-estimate mixture weights and variances from responsibilities.

    A component whose total responsibility is below ``1e-8 * |Omega|`` is
    reset to the global residual variance with weight ``1/K`` before the
    weights are renormalized.
    """
    res2 = residuals(R, model.U, model.V, model.offset) ** 2
    S = gamma.shape[0]
    Sk = gamma.sum(axis=0)
    dead = Sk < 1e-8 * S
    with np.errstate(invalid="ignore", divide="ignore"):
        sigma2 = (gamma * res2[:, None]).sum(axis=0) / Sk
    pi = Sk / S
    if dead.any():
        sigma2[dead] = res2.mean() if S else 1.0
        pi[dead] = 1.0 / pi.size
        log.debug("reinitialized mixture components %s", np.flatnonzero(dead).tolist())
    sigma2 = np.maximum(sigma2, variance_floor)
    pi = pi / pi.sum()
    return MixtureUpdate(pi, sigma2, tuple(np.flatnonzero(dead).tolist()))


def weights_from_responsibilities(gamma: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    """Least-squares weight per observed cell, ``sum_k gamma_k / (2 sigma2_k)``.

    Unobserved cells have no row here and so carry weight zero implicitly.
    """
    return gamma @ (1.0 / (2.0 * np.asarray(sigma2)))


def weighted_objective(R: SparseRatingMatrix, weights, U, V) -> float:
    return float(np.sum(weights * residuals(R, U, V) ** 2))


class _RowIndex:
    """Entries grouped by row (users or items) for the batched normal equations."""

    def __init__(self, rows, cols, n_rows):
        self.order = np.argsort(rows, kind="stable")
        counts = np.bincount(rows, minlength=n_rows)
        self.indptr = np.concatenate([[0], np.cumsum(counts)])
        self.cols = cols[self.order]
        self.n_rows = n_rows


class _AlsIndex:
    def __init__(self, R: SparseRatingMatrix):
        self.by_user = _RowIndex(R.users, R.items, R.num_users)
        self.by_item = _RowIndex(R.items, R.users, R.num_items)


@njit(cache=True)
def _normal_equations(indptr, cols, w, y, other):  # pragma: no cover - compiled
    n_rows = indptr.size - 1
    d = other.shape[1]
    A = np.zeros((n_rows, d, d))
    B = np.zeros((n_rows, d))
    wsum = np.zeros(n_rows)
    for row in range(n_rows):
        for e in range(indptr[row], indptr[row + 1]):
            we = w[e]
            if we == 0.0:
                continue
            x = other[cols[e]]
            wsum[row] += we
            for a in range(d):
                wa = we * x[a]
                B[row, a] += wa * y[e]
                for c in range(a, d):
                    A[row, a, c] += wa * x[c]
        for a in range(d):
            for c in range(a + 1, d):
                A[row, c, a] = A[row, a, c]
    return A, B, wsum


def _solve_side(idx: _RowIndex, values, weights, other, current, ridge, jitter):
    """Row-wise weighted ridge solve; rows without weight keep ``current``."""
    d = other.shape[1]
    A, B, wsum = _normal_equations(idx.indptr, idx.cols, weights[idx.order],
                                   values[idx.order], np.ascontiguousarray(other))
    out = current.copy()
    live = np.flatnonzero(wsum > 0)
    if live.size:
        Al = A[live]
        scale = np.trace(Al, axis1=1, axis2=2) / d + 1.0
        Al = Al + (ridge + jitter * scale)[:, None, None] * np.eye(d)
        Bl = B[live]
        try:
            out[live] = np.linalg.solve(Al, Bl[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            for row, a, b in zip(live, Al, Bl):
                out[row] = np.linalg.lstsq(a, b, rcond=None)[0]
    return out, idx.n_rows - live.size


def weighted_low_rank(R: SparseRatingMatrix, weights, d: int, U0, V0, inner_iters: int = 1,
                      ridge: float = 0.0, jitter: float = 1e-9, tol: float | None = None,
                      index: _AlsIndex | None = None, return_frozen: bool = False):
    """Alternating weighted least squares for ``min sum w_ij (r_ij - u_i . v_j)^2``.

    Each sweep solves the user rows given ``V`` and then the item rows given
    ``U``, so the weighted objective never increases (up to the ``jitter``
    ridge, relative to each row's mean diagonal, that keeps the normal
    equations nonsingular). Rows or columns with
    zero total weight are left at their warm-start values; with
    ``return_frozen`` their counts are returned as well.
    """
    U = np.array(U0, dtype=float, copy=True)
    V = np.array(V0, dtype=float, copy=True)
    if U.shape[1] != d or V.shape[1] != d:
        raise ValueError(f"warm start has latent dimension {U.shape[1]}/{V.shape[1]}, expected {d}")
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    index = index or _AlsIndex(R)
    frozen = (0, 0)
    prev = weighted_objective(R, weights, U, V) if tol is not None else None
    for _ in range(inner_iters):
        U, fu = _solve_side(index.by_user, R.ratings, weights, V, U, ridge, jitter)
        V, fv = _solve_side(index.by_item, R.ratings, weights, U, V, ridge, jitter)
        frozen = (fu, fv)
        if tol is not None:
            cur = weighted_objective(R, weights, U, V)
            if prev - cur <= tol * max(prev, 1e-300):
                break
            prev = cur
    if return_frozen:
        return U, V, frozen
    return U, V


def svd_start(R: SparseRatingMatrix, weights, d: int):
    """Deterministic warm start for :func:`weighted_low_rank`.

    Cells that are unobserved or carry zero weight are filled with the
    weighted mean rating; the factors are the rank-``d`` truncated SVD of that
    dense matrix with the singular values split evenly. ALS is a local method
    and random starts can stall at a non-global stationary point, which this
    start avoids on small problems. Builds an ``m x n`` dense array.
    """
    weights = np.asarray(weights, dtype=float)
    total = weights.sum()
    fill = float(weights @ R.ratings / total) if total > 0 else R.global_mean()
    dense = np.full(R.shape, fill)
    keep = weights > 0
    dense[R.users[keep], R.items[keep]] = R.ratings[keep]
    P, s, Qt = np.linalg.svd(dense, full_matrices=False)
    if d > s.size:
        raise ValueError(f"rank {d} exceeds min(m, n) = {s.size}")
    root = np.sqrt(s[:d])
    return P[:, :d] * root, Qt[:d].T * root


def _seed_of(rng) -> int:
    if rng is None:
        return 0
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return int(rng.integers(2**63 - 1))


def _keyed_normals(seed, kind, labels, d, scale):
    # one stream per logical user/item so the draw does not depend on row order
    out = np.empty((len(labels), d))
    for row, lab in enumerate(np.asarray(labels).tolist()):
        key = lab if isinstance(lab, int) and lab >= 0 else abs(hash(lab))
        out[row] = np.random.default_rng([seed, kind, key]).normal(0.0, scale, d)
    return out


def init_model(R: SparseRatingMatrix, config: FitConfig, rng=None) -> MoGMFModel:
    """Random factors, uniform mixture weights, variances spread around a warm-start residual.

    The warm start is two unit-weight ALS sweeps of rank ``latent_dim``; the
    ``K`` variances are that residual variance times ``4**t`` for ``t`` evenly
    spaced in ``[-1, 1]``.
    """
    if len(R) == 0:
        raise ValueError("cannot initialize on an empty rating matrix")
    seed = config.seed if rng is None else _seed_of(rng)
    d, K = config.latent_dim, config.n_components
    U = _keyed_normals(seed, 0, R.user_labels, d, config.init_scale)
    V = _keyed_normals(seed, 1, R.item_labels, d, config.init_scale)
    Uw, Vw = weighted_low_rank(R, np.ones(len(R)), d, U, V, inner_iters=2,
                               ridge=max(config.ridge, 1.0), jitter=config.jitter)
    s2 = max(float(np.mean(residuals(R, Uw, Vw) ** 2)), config.variance_floor)
    spread = 4.0 ** np.linspace(-1.0, 1.0, K) if K > 1 else np.ones(1)
    sigma2 = np.maximum(s2 * spread, config.variance_floor)
    return MoGMFModel(U, V, np.full(K, 1.0 / K), sigma2, info={"seed": seed})


def penalized_log_likelihood(R, model, ridge):
    pen = ridge * (np.sum(model.U ** 2) + np.sum(model.V ** 2)) if ridge else 0.0
    return log_likelihood(R, model) - pen


def fit(R: SparseRatingMatrix, config: FitConfig = FitConfig(), rng=None) -> MoGMFModel:
    """Run EM until the relative Frobenius change of ``U`` drops below ``tol``.

    ``model.info`` records the log-likelihood after every iteration
    (``loglik``; element 0 is the initial model), the ridge-penalized value
    (``objective``), the ``U`` change per iteration, mixture components that
    had to be reinitialized, and whether the stop rule fired. With
    ``config.center`` the factors model ratings minus the training mean,
    which is kept in ``model.offset``.
    """
    offset = 0.0
    if config.center:
        offset = R.global_mean()
        R = SparseRatingMatrix(R.num_users, R.num_items, R.users, R.items, R.ratings - offset,
                               RatingDomain(R.domain.low - offset, R.domain.high - offset),
                               R.user_labels, R.item_labels)
    model = init_model(R, config, rng)
    index = _AlsIndex(R)
    gamma = e_step(R, model)
    history = [log_likelihood(R, model)]
    objective = [penalized_log_likelihood(R, model, config.ridge)]
    changes, reinit = [], []
    converged = False
    frozen = (0, 0)
    it = 0
    for it in range(1, config.max_iters + 1):
        mix = m_step_mixture(R, model, gamma, config.variance_floor)
        if mix.reinitialized:
            reinit.append((it, mix.reinitialized))
        w = weights_from_responsibilities(gamma, mix.sigma2)
        U, V, frozen = weighted_low_rank(R, w, config.latent_dim, model.U, model.V,
                                         config.inner_iters, config.ridge, config.jitter,
                                         index=index, return_frozen=True)
        change = np.linalg.norm(U - model.U) / max(np.linalg.norm(model.U), 1e-300)
        model = replace(model, U=U, V=V, pi=mix.pi, sigma2=mix.sigma2)
        gamma = e_step(R, model)
        history.append(log_likelihood(R, model))
        objective.append(penalized_log_likelihood(R, model, config.ridge))
        changes.append(float(change))
        if change < config.tol:
            converged = True
            break
    model = replace(model, offset=offset)
    model.info = {
        "seed": model.info["seed"],
        "offset": offset,
        "iterations": it if config.max_iters else 0,
        "loglik": history,
        "objective": objective,
        "u_change": changes,
        "reinitialized": reinit,
        "frozen_rows": frozen,
        "converged": converged,
        "final_loglik": history[-1],
    }
    return model


def predict(model, i, j, clip=None):
    """``u_i . v_j``; with ``clip`` (a RatingDomain) the value is clamped to its range.

    ``i`` and ``j`` may be arrays of equal shape.
    """
    i = np.asarray(i)
    j = np.asarray(j)
    if np.any(i < 0) or np.any(j < 0) or np.any(i >= model.U.shape[0]) or np.any(j >= model.V.shape[0]):
        raise IndexError("user or item index out of range")
    out = np.einsum("...k,...k->...", model.U[i], model.V[j]) + getattr(model, "offset", 0.0)
    if clip is not None:
        out = clip.clip(out)
    return float(out) if out.ndim == 0 else out
