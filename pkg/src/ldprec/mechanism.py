"""Bounded Laplace (BLP) perturbation and the Laplace baselines.

The BLP mechanism draws Laplace noise around the true rating and rejects
draws that leave the rating domain, so its output density is the Laplace
density renormalized over ``[low, high]``::

    f(x | r) = exp(-|x - r| / b) / (2 b C(r)),   low <= x <= high

with ``C(r) = 1 - (exp(-(r - low)/b) + exp(-(high - r)/b)) / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .domain import PrivacyParams, RatingDomain
from .errors import ConfigError, ConvergenceError, DomainError, RejectionLimitError

MAX_REJECTION_ATTEMPTS = 10**6


def _check_scale(b):
    if not (np.isfinite(b) and b > 0):
        raise DomainError(f"scale must be positive and finite, got {b}")


def _as_rating(r, domain: RatingDomain):
    r = np.asarray(r, dtype=float)
    domain.check(r, "input rating")
    return r


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def normalization_constant(r, domain: RatingDomain, b: float):
    """Probability that ``r + Laplace(0, b)`` lands in the domain.

    Vectorized over ``r``. Equal to the acceptance rate of one rejection round.
    """
    _check_scale(b)
    r = _as_rating(r, domain)
    c = 1.0 - 0.5 * (np.exp(-(r - domain.low) / b) + np.exp(-(domain.high - r) / b))
    return _scalar_or_array(c)


def delta_c(domain: RatingDomain, sensitivity: float, b: float) -> float:
    """Ratio ``C(low + sensitivity) / C(low)``; always >= 1."""
    if not 0 < sensitivity <= domain.width * (1 + 1e-12):
        raise DomainError(f"sensitivity {sensitivity} not in (0, {domain.width}]")
    _check_scale(b)
    if sensitivity >= domain.width:
        return 1.0
    shifted = normalization_constant(domain.low + sensitivity, domain, b)
    return shifted / normalization_constant(domain.low, domain, b)


def privacy_loss_bound(domain: RatingDomain, sensitivity: float, b: float) -> float:
    """Worst-case log density ratio of BLP: ``log(delta_c) + sensitivity / b``."""
    return math.log(delta_c(domain, sensitivity, b)) + sensitivity / b


def calibrate_scale(
    domain: RatingDomain,
    params: PrivacyParams,
    *,
    tol: float = 1e-10,
    max_iter: int = 200,
    damping: float = 0.5,
) -> float:
    """Smallest scale ``b`` with ``b >= sensitivity / (epsilon - log delta_c(b))``.

    Full-width sensitivity gives ``delta_c == 1`` and the closed form
    ``width / epsilon``. Otherwise a damped fixed-point iteration starts from
    ``sensitivity / epsilon``; bisection on
    ``g(b) = b (epsilon - log delta_c(b)) - sensitivity`` takes over if the
    iteration stalls or lands somewhere infeasible.
    """
    params.validate_for(domain)
    eps, sens = params.epsilon, params.sensitivity
    if sens >= domain.width:
        return domain.width / eps

    def g(b):
        return b * (eps - math.log(delta_c(domain, sens, b))) - sens

    b = sens / eps
    for _ in range(max_iter):
        gap = eps - math.log(delta_c(domain, sens, b))
        if gap <= 0:
            break
        nxt = (1 - damping) * b + damping * sens / gap
        if abs(nxt - b) <= tol * b:
            # polish: bracket the fixed point tightly so the result is feasible
            lo, hi = nxt * (1 - 1e-6), nxt * (1 + 1e-6)
            if g(lo) < 0 <= g(hi):
                return _bisect(g, lo, hi, tol)
            break
        b = nxt
    lo = sens / eps
    if g(lo) >= 0:
        return lo
    hi = 2 * lo
    for _ in range(200):
        if g(hi) >= 0:
            break
        lo, hi = hi, 2 * hi
    else:
        raise ConvergenceError("no feasible scale found while bracketing")
    return _bisect(g, lo, hi, tol)


def _bisect(g, lo, hi, tol, max_iter=400):
    """Shrink ``[lo, hi]`` with ``g(lo) < 0 <= g(hi)``; returns the feasible end."""
    for _ in range(max_iter):
        if hi - lo <= tol * hi:
            return hi
        mid = 0.5 * (lo + hi)
        if g(mid) >= 0:
            hi = mid
        else:
            lo = mid
    raise ConvergenceError("bisection on the scale condition did not converge")


def _laplace_signed_mass(x, center, b):
    # P(center <= X <= x) with sign, computed with expm1 to keep tails accurate
    d = np.asarray(x, dtype=float) - center
    return -0.5 * np.sign(d) * np.expm1(-np.abs(d) / b)


def laplace_interval_mass(lo, hi, center, b):
    """``P(lo <= center + Laplace(0, b) <= hi)``, broadcasting over all arguments."""
    lo, hi = np.broadcast_arrays(np.asarray(lo, float), np.asarray(hi, float))
    mass = _laplace_signed_mass(hi, center, b) - _laplace_signed_mass(lo, center, b)
    return np.where(hi > lo, mass, 0.0)


def blp_pdf(r_star, r, domain: RatingDomain, b: float):
    """Density of the BLP output at ``r_star`` for true rating ``r``."""
    r = _as_rating(r, domain)
    c = normalization_constant(r, domain, b)
    x = np.asarray(r_star, dtype=float)
    dens = np.exp(-np.abs(x - r) / b) / (2 * b * c)
    return _scalar_or_array(np.where(domain.contains(x), dens, 0.0))


def blp_interval_mass(lo, hi, r, domain: RatingDomain, b: float):
    """``P(lo <= W(r) <= hi)`` for the BLP output ``W(r)``."""
    r = _as_rating(r, domain)
    c = normalization_constant(r, domain, b)
    lo = np.maximum(np.asarray(lo, float), domain.low)
    hi = np.minimum(np.asarray(hi, float), domain.high)
    return _scalar_or_array(laplace_interval_mass(lo, hi, r, b) / c)


class Mechanism(Protocol):
    name: str

    def perturb(self, ratings, rng: np.random.Generator) -> np.ndarray: ...


@dataclass(frozen=True)
class BlpMechanism:
    """Bounded Laplace mechanism with a fixed scale."""

    domain: RatingDomain
    params: PrivacyParams
    scale: float
    max_attempts: int = MAX_REJECTION_ATTEMPTS
    name: str = "blp"

    def __post_init__(self):
        _check_scale(self.scale)
        self.params.validate_for(self.domain)

    @classmethod
    def calibrated(cls, domain: RatingDomain, epsilon: float, sensitivity: float | None = None):
        params = PrivacyParams(epsilon, domain.width if sensitivity is None else sensitivity)
        return cls(domain, params, calibrate_scale(domain, params))

    def pdf(self, r_star, r):
        return blp_pdf(r_star, r, self.domain, self.scale)

    def sample(self, ratings, rng: np.random.Generator, return_attempts: bool = False):
        """Rejection-sample one output per input rating.

        Every pending entry redraws in each round until it lands in the
        closed domain.
        """
        r = _as_rating(ratings, self.domain)
        flat = r.ravel()
        out = np.empty_like(flat)
        attempts = np.zeros(flat.shape, dtype=np.int64)
        pending = np.arange(flat.size)
        rounds = 0
        lo, hi = self.domain.low, self.domain.high
        while pending.size:
            if rounds >= self.max_attempts:
                raise RejectionLimitError(
                    f"{pending.size} draws still outside the domain after {rounds} attempts"
                )
            draws = flat[pending] + rng.laplace(0.0, self.scale, size=pending.size)
            attempts[pending] += 1
            ok = (draws >= lo) & (draws <= hi)
            out[pending[ok]] = draws[ok]
            pending = pending[~ok]
            rounds += 1
        out = out.reshape(r.shape)
        if return_attempts:
            return _scalar_or_array(out), _scalar_or_array(attempts.reshape(r.shape))
        return _scalar_or_array(out)

    def perturb(self, ratings, rng):
        return np.asarray(self.sample(ratings, rng), dtype=float)


def blp_sample(r, mech: BlpMechanism, rng: np.random.Generator):
    return mech.sample(r, rng)


def laplace_sample(r, b: float, rng: np.random.Generator):
    _check_scale(b)
    r = np.asarray(r, dtype=float)
    return _scalar_or_array(r + rng.laplace(0.0, b, size=r.shape))


def clamp_perturb(r, domain: RatingDomain, b: float, rng: np.random.Generator):
    """Laplace noise followed by clamping into the domain."""
    r = _as_rating(r, domain)
    return _scalar_or_array(domain.clip(laplace_sample(r, b, rng)))


@dataclass(frozen=True)
class LaplaceMechanism:
    """Unbounded Laplace mechanism; outputs may leave the rating scale."""

    domain: RatingDomain
    scale: float
    name: str = "laplace"

    def perturb(self, ratings, rng):
        return np.asarray(laplace_sample(_as_rating(ratings, self.domain), self.scale, rng))


@dataclass(frozen=True)
class ClampedLaplaceMechanism:
    domain: RatingDomain
    scale: float
    name: str = "laplace-clamp"

    def perturb(self, ratings, rng):
        return np.asarray(clamp_perturb(ratings, self.domain, self.scale, rng))


@dataclass(frozen=True)
class IdentityMechanism:
    """No perturbation; the non-private baseline."""

    name: str = "none"

    def perturb(self, ratings, rng):
        return np.array(ratings, dtype=float, copy=True)


MECHANISMS = ("blp", "laplace-clamp", "laplace", "none")


def make_mechanism(name: str, domain: RatingDomain, epsilon: float | None, scale_factor: float = 1.0):
    """Build a mechanism by name with its standard scale for ``epsilon``.

    BLP uses :func:`calibrate_scale`; the Laplace variants use
    ``width / epsilon``. ``scale_factor`` multiplies the scale (values below 1
    deliberately break the guarantee, for auditing).
    """
    if name == "none":
        return IdentityMechanism()
    if epsilon is None:
        raise ConfigError(f"mechanism {name!r} needs an epsilon")
    if name == "blp":
        params = PrivacyParams.for_domain(domain, epsilon)
        return BlpMechanism(domain, params, scale_factor * calibrate_scale(domain, params))
    if name == "laplace-clamp":
        return ClampedLaplaceMechanism(domain, scale_factor * domain.width / epsilon)
    if name == "laplace":
        return LaplaceMechanism(domain, scale_factor * domain.width / epsilon)
    raise ConfigError(f"unknown mechanism {name!r}; choose from {MECHANISMS}")


def perturb_matrix(R, mech, rng: np.random.Generator):
    """Perturb every observed rating once; the sparsity pattern is kept.

    Only mechanisms whose outputs stay inside the domain are accepted, since
    the result is again a rating matrix over the same scale.
    """
    if isinstance(mech, LaplaceMechanism):
        raise ConfigError("unbounded Laplace output is not a valid rating matrix")
    R.domain.check(R.ratings)
    return R.with_ratings(mech.perturb(R.ratings, rng))


@dataclass(frozen=True)
class NoiseDistributionTable:
    """Probabilities of the noise ``r* - r`` over consecutive width-``step`` intervals.

    ``edges`` has one more element than ``probabilities``; interval ``k`` is
    ``[edges[k], edges[k+1])``.
    """

    edges: np.ndarray
    probabilities: np.ndarray

    @property
    def intervals(self) -> list[tuple[float, float]]:
        return list(zip(self.edges[:-1].tolist(), self.edges[1:].tolist()))

    def histogram(self, noise) -> np.ndarray:
        return interval_histogram(noise, self.edges)

    def total_variation(self, other) -> float:
        return 0.5 * float(np.abs(self.probabilities - np.asarray(other)).sum())


def interval_histogram(samples, edges) -> np.ndarray:
    """Fraction of ``samples`` in each half-open interval ``[edges[k], edges[k+1])``.

    The last interval also takes a sample sitting exactly on the top edge.
    Samples outside all intervals are counted in the denominator only.
    """
    samples = np.asarray(samples, dtype=float).ravel()
    edges = np.asarray(edges, dtype=float)
    idx = np.searchsorted(edges, samples, side="right") - 1
    idx[samples == edges[-1]] = edges.size - 2
    keep = (idx >= 0) & (idx < edges.size - 1)
    counts = np.bincount(idx[keep], minlength=edges.size - 1)
    return counts / max(samples.size, 1)


def noise_distribution(domain: RatingDomain, rating_marginal, b: float) -> NoiseDistributionTable:
    """Theoretical distribution of BLP noise over the rank grid.

    The noise range ``[Q1 - Qh, Qh - Q1)`` is cut into ``2(h - 1)`` intervals
    of one rank step. For each true rank ``Q_i`` the interval mass is the BLP
    density integrated over the interval shifted by ``Q_i``; those masses are
    mixed with weights ``P(r = Q_i)``.
    """
    if domain.ranks is None:
        raise DomainError("noise distribution needs a rank grid")
    q = np.asarray(domain.ranks)
    p = np.asarray(rating_marginal, dtype=float)
    if p.shape != q.shape:
        raise DomainError(f"marginal has {p.size} entries for {q.size} ranks")
    if np.any(p < 0) or not np.isclose(p.sum(), 1.0, atol=1e-9):
        raise DomainError("rating marginal must be a probability vector")
    _check_scale(b)
    span = q[-1] - q[0]
    n_int = 2 * (q.size - 1)
    edges = -span + domain.step * np.arange(n_int + 1)
    edges[-1] = span
    lo = q[:, None] + edges[None, :-1]
    hi = q[:, None] + edges[None, 1:]
    cond = blp_interval_mass(lo, hi, q[:, None], domain, b)
    probs = p @ cond
    return NoiseDistributionTable(edges, probs)


def rating_marginal(ratings, domain: RatingDomain) -> np.ndarray:
    """Empirical distribution of ratings snapped to the nearest rank."""
    snapped = snap_to_ranks(ratings, domain, return_index=True)
    counts = np.bincount(snapped, minlength=len(domain.ranks))
    return counts / counts.sum()


def snap_to_ranks(values, domain: RatingDomain, return_index: bool = False):
    """Round continuous values to the nearest rank of the domain grid."""
    if domain.ranks is None:
        raise DomainError("snapping needs a rank grid")
    q = np.asarray(domain.ranks)
    idx = np.clip(np.rint((np.asarray(values, float) - q[0]) / domain.step), 0, q.size - 1)
    idx = idx.astype(np.int64)
    return idx if return_index else q[idx]


def f_ratio(r, z, domain: RatingDomain, b: float):
    """Privacy-loss envelope ``C(r + z) / C(r) * exp(z / b)`` for ``z >= 0``."""
    r = np.asarray(r, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.any(z < 0):
        raise DomainError("shift z must be nonnegative")
    domain.check(r, "r")
    domain.check(r + z, "r + z")
    num = normalization_constant(r + z, domain, b)
    return _scalar_or_array(num / normalization_constant(r, domain, b) * np.exp(z / b))
