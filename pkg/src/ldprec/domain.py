"""Rating scale and privacy parameter types."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class RatingDomain:
    """Closed rating interval ``[low, high]`` with an optional evenly spaced rank grid.

    When ``ranks`` is given it must start at ``low``, end at ``high`` and have a
    constant step.
    """

    low: float
    high: float
    ranks: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (np.isfinite(self.low) and np.isfinite(self.high)) or self.low >= self.high:
            raise DomainError(f"need finite low < high, got [{self.low}, {self.high}]")
        if self.ranks is not None:
            q = np.asarray(self.ranks, dtype=float)
            object.__setattr__(self, "ranks", tuple(float(x) for x in q))
            if q.size < 2:
                raise DomainError("rank grid needs at least two ranks")
            if not (np.isclose(q[0], self.low) and np.isclose(q[-1], self.high)):
                raise DomainError("rank grid must start at low and end at high")
            steps = np.diff(q)
            if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
                raise DomainError("rank grid must have a uniform positive step")

    @classmethod
    def with_step(cls, low: float, high: float, step: float) -> "RatingDomain":
        count = int(round((high - low) / step)) + 1
        if count < 2 or not np.isclose(low + (count - 1) * step, high):
            raise DomainError(f"step {step} does not tile [{low}, {high}]")
        return cls(low, high, tuple(np.linspace(low, high, count)))

    @property
    def width(self) -> float:
        return self.high - self.low

    @property
    def step(self) -> float | None:
        if self.ranks is None:
            return None
        return self.ranks[1] - self.ranks[0]

    def contains(self, x) -> np.ndarray | bool:
        x = np.asarray(x, dtype=float)
        out = (x >= self.low) & (x <= self.high)
        return bool(out) if out.ndim == 0 else out

    def check(self, x, what: str = "rating") -> None:
        x = np.asarray(x, dtype=float)
        bad = ~((x >= self.low) & (x <= self.high))
        if np.any(bad):
            first = x[bad].ravel()[0] if x.ndim else float(x)
            raise DomainError(f"{what} {first} outside [{self.low}, {self.high}]")

    def clip(self, x):
        return np.clip(x, self.low, self.high)


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    sensitivity: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if not self.sensitivity > 0:
            raise DomainError(f"sensitivity must be positive, got {self.sensitivity}")

    @classmethod
    def for_domain(cls, domain: RatingDomain, epsilon: float) -> "PrivacyParams":
        """Per-rating input perturbation: sensitivity is the full scale width."""
        return cls(epsilon, domain.width)

    def validate_for(self, domain: RatingDomain) -> None:
        if self.sensitivity > domain.width * (1 + 1e-12):
            raise DomainError(
                f"sensitivity {self.sensitivity} exceeds domain width {domain.width}"
            )


MOVIELENS = RatingDomain.with_step(0.5, 5.0, 0.5)
JESTER = RatingDomain.with_step(-10.0, 10.0, 1.0)
LIBIMSETI = RatingDomain.with_step(1.0, 10.0, 1.0)
