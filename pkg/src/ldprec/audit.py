"""Monte Carlo check of the local-DP inequality for a rating perturbation mechanism.

For every input on a grid the mechanism is sampled ``samples`` times and the
outputs are binned. The audited budget is the largest log ratio of two
inputs' bin frequencies; its upper confidence bound uses the delta-method
standard error of each log frequency with a Bonferroni-corrected one-sided
normal quantile.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .domain import RatingDomain
from .errors import InsufficientSamplesError
from .mechanism import ClampedLaplaceMechanism, make_mechanism

MIN_CELL_COUNT = 50


@dataclass(frozen=True)
class AuditReport:
    mechanism: str
    epsilon: float
    slack: float
    measured: float
    upper: float
    passed: bool
    worst_pair: tuple[float, float]
    worst_cell: tuple[float, float]
    samples: int
    bins: int
    min_count: int
    notes: tuple[str, ...] = field(default=())

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        lines = [
            f"{verdict} {self.mechanism} at epsilon={self.epsilon:g} (slack {self.slack:g})",
            f"measured budget {self.measured:.4f}, upper confidence bound {self.upper:.4f}",
            f"worst inputs r={self.worst_pair[0]:g}, r'={self.worst_pair[1]:g} "
            f"on output cell [{self.worst_cell[0]:g}, {self.worst_cell[1]:g}]",
            f"{self.samples} samples per input, {self.bins} bins, smallest cell count {self.min_count}",
        ]
        lines.extend(self.notes)
        return "\n".join(lines)


def _cells(domain: RatingDomain, bins: int, atoms: bool):
    edges = np.linspace(domain.low, domain.high, bins + 1)
    cells = [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])]
    if atoms:
        cells = [(domain.low, domain.low)] + cells + [(domain.high, domain.high)]
    return edges, cells


def _cell_counts(out, domain, edges, atoms):
    """Counts per cell; out-of-domain outputs fall in no cell."""
    inside = (out >= domain.low) & (out <= domain.high)
    vals = out[inside]
    if atoms:
        at_low = vals == domain.low
        at_high = vals == domain.high
        interior = vals[~(at_low | at_high)]
    else:
        interior = vals
    idx = np.clip(np.searchsorted(edges, interior, side="right") - 1, 0, edges.size - 2)
    counts = np.bincount(idx, minlength=edges.size - 1)
    if atoms:
        counts = np.r_[at_low.sum(), counts, at_high.sum()]
    return counts


def ldp_audit(mech, domain: RatingDomain, epsilon: float, bins: int = 20, samples: int = 10**6,
              rng=None, slack: float = 0.05, confidence: float = 0.99, inputs=None,
              scale_factor: float = 1.0, boundary_atoms: bool | None = None,
              min_count: int = MIN_CELL_COUNT) -> AuditReport:
    """Estimate the worst-case output log ratio over input pairs and cells.

    Parameters
    ----------
    mech : str or mechanism
        A mechanism name for :func:`make_mechanism` (scaled by
        ``scale_factor``) or an object with ``perturb(ratings, rng)``.
    inputs : array_like, optional
        Input ratings to compare; defaults to the domain's rank grid, or
        five evenly spaced points when it has none.
    boundary_atoms : bool, optional
        Treat outputs exactly at ``low`` and ``high`` as their own cells.
        Defaults to True for the clamped Laplace mechanism, whose output has
        point masses there.

    Raises
    ------
    InsufficientSamplesError
        If any cell of any input holds fewer than ``min_count`` outputs.
    """
    if isinstance(mech, str):
        mech = make_mechanism(mech, domain, epsilon, scale_factor)
    if bins < 1 or samples < 1:
        raise ValueError("bins and samples must be positive")
    rng = np.random.default_rng(rng)
    if inputs is None:
        inputs = domain.ranks if domain.ranks is not None else np.linspace(domain.low, domain.high, 5)
    inputs = np.asarray(inputs, dtype=float)
    domain.check(inputs, "audit input")
    if inputs.size < 2:
        raise ValueError("need at least two inputs to compare")
    atoms = isinstance(mech, ClampedLaplaceMechanism) if boundary_atoms is None else boundary_atoms
    edges, cells = _cells(domain, bins, atoms)

    counts = np.empty((inputs.size, len(cells)), dtype=np.int64)
    for a, r in enumerate(inputs):
        out = np.asarray(mech.perturb(np.full(samples, r), rng), dtype=float)
        counts[a] = _cell_counts(out, domain, edges, atoms)
    smallest = int(counts.min())
    if smallest < min_count:
        a, c = np.unravel_index(np.argmin(counts), counts.shape)
        raise InsufficientSamplesError(
            f"cell [{cells[c][0]:g}, {cells[c][1]:g}] has {smallest} outputs for input "
            f"{inputs[a]:g}; need at least {min_count} (raise samples or lower bins)"
        )

    p = counts / samples
    logp = np.log(p)
    var = (1.0 - p) / (samples * p)
    diff = logp[:, None, :] - logp[None, :, :]
    se = np.sqrt(var[:, None, :] + var[None, :, :])
    n_tests = inputs.size * (inputs.size - 1) * len(cells)
    z = norm.isf((1.0 - confidence) / n_tests)
    ub = diff + z * se
    measured = float(diff.max())
    a, b, c = np.unravel_index(np.argmax(ub), ub.shape)
    upper = float(ub[a, b, c])
    notes = []
    if atoms:
        mass = p[:, [0, -1]].sum(axis=1)
        notes.append(f"boundary atoms hold {mass.min():.3f}-{mass.max():.3f} of the output mass")
    outside = samples - counts.sum(axis=1)
    if outside.max() > 0:
        notes.append(f"up to {outside.max() / samples:.3f} of outputs fell outside the domain "
                     "and were not binned")
    return AuditReport(
        mechanism=getattr(mech, "name", type(mech).__name__),
        epsilon=float(epsilon),
        slack=float(slack),
        measured=measured,
        upper=upper,
        passed=upper <= epsilon + slack,
        worst_pair=(float(inputs[a]), float(inputs[b])),
        worst_cell=cells[c],
        samples=int(samples),
        bins=int(bins),
        min_count=smallest,
        notes=tuple(notes),
    )
