"""Experiment configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .data import DATASETS
from .errors import ConfigError
from .evaluation import DEFAULT_THRESHOLDS
from .mog import FitConfig

MECHANISM_CHOICES = ("blp", "laplace-clamp", "none")
PREDICTOR_CHOICES = ("mog-mf", "mf", "svd")
EPSILON_RANGE = (0.1, 3.0)
DEFAULT_EPSILONS = (0.1, 0.5, 1.0, 2.0, 3.0)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _parse_optional_float(text: str):
    return None if text.strip().lower() in ("", "none") else float(text)


def _parse_optional_str(text: str):
    return None if text.strip().lower() in ("", "none") else text.strip()


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment grid.

    The model settings below the dataset/grid fields are the defaults used
    for the reported runs: MoG-MF is fit on mean-centered ratings with a
    ridge of 1, and the SGD baseline uses an L2 penalty of 0.05.
    """

    dataset: str = "movielens"
    data_path: str | None = None
    mechanism: str = "blp"
    predictor: str = "mog-mf"
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    folds: int = 10
    k_components: int = 3
    latent_dim: int = 20
    seed: int = 0
    subsample: float | None = None
    clip_predictions: bool = False
    relevance_threshold: float | None = None
    top_k: int = 10
    out: str | None = None
    max_iters: int = 100
    tol: float = 1e-4
    variance_floor: float = 1e-6
    ridge: float = 1.0
    center: bool = True
    mf_learning_rate: float = 0.005
    mf_epochs: int = 100
    mf_reg: float = 0.05
    svd_fill: str = "global"
    allow_any_epsilon: bool = False

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}; choose from {sorted(DATASETS)}")
        if self.mechanism not in MECHANISM_CHOICES:
            raise ConfigError(f"mechanism must be one of {MECHANISM_CHOICES}, got {self.mechanism!r}")
        if self.predictor not in PREDICTOR_CHOICES:
            raise ConfigError(f"predictor must be one of {PREDICTOR_CHOICES}, got {self.predictor!r}")
        eps = tuple(float(e) for e in self.epsilons)
        object.__setattr__(self, "epsilons", eps)
        if not eps:
            raise ConfigError("need at least one epsilon")
        lo, hi = EPSILON_RANGE
        for e in eps:
            if not e > 0:
                raise ConfigError(f"epsilon must be positive, got {e}")
            if not self.allow_any_epsilon and not lo <= e <= hi:
                raise ConfigError(f"epsilon {e} outside [{lo}, {hi}]; set allow_any_epsilon to override")
        if self.folds < 2:
            raise ConfigError("folds must be at least 2")
        if self.k_components < 1 or self.latent_dim < 1 or self.top_k < 1:
            raise ConfigError("k_components, latent_dim and top_k must be >= 1")
        if self.subsample is not None and not 0 < self.subsample <= 1:
            raise ConfigError(f"subsample must be in (0, 1], got {self.subsample}")

    @property
    def threshold(self) -> float:
        if self.relevance_threshold is not None:
            return self.relevance_threshold
        return DEFAULT_THRESHOLDS[self.dataset]

    def fit_config(self) -> FitConfig:
        return FitConfig(n_components=self.k_components, latent_dim=self.latent_dim,
                         max_iters=self.max_iters, tol=self.tol,
                         variance_floor=self.variance_floor, ridge=self.ridge,
                         center=self.center, seed=self.seed)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def provenance(self) -> str:
        """Compact ``key=value;...`` record of every setting that affects results."""
        skip = {"out", "data_path", "epsilons"}
        parts = []
        for f in dataclasses.fields(self):
            if f.name in skip:
                continue
            parts.append(f"{f.name}={getattr(self, f.name)}")
        parts.append(f"threshold={self.threshold}")
        return ";".join(parts)


_PARSERS = {
    "dataset": str.strip,
    "data_path": _parse_optional_str,
    "mechanism": str.strip,
    "predictor": str.strip,
    "epsilons": _parse_floats,
    "folds": int,
    "k_components": int,
    "latent_dim": int,
    "seed": int,
    "subsample": _parse_optional_float,
    "clip_predictions": _parse_bool,
    "relevance_threshold": _parse_optional_float,
    "top_k": int,
    "out": _parse_optional_str,
    "max_iters": int,
    "tol": float,
    "variance_floor": float,
    "ridge": float,
    "center": _parse_bool,
    "mf_learning_rate": float,
    "mf_epochs": int,
    "mf_reg": float,
    "svd_fill": str.strip,
    "allow_any_epsilon": _parse_bool,
}

# accepted spellings in config files, mirroring the command-line flags
_ALIASES = {"epsilon": "epsilons", "k": "k_components", "d": "latent_dim"}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines into typed settings.

    Blank lines and ``#`` comments are ignored. Keys may use dashes or
    underscores. Raises :class:`ConfigError` naming the offending line.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        key = _ALIASES.get(key, key)
        if key not in _PARSERS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    return values


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read a config file; entries in ``overrides`` take precedence."""
    values = parse_config_text(Path(path).read_text(encoding="utf-8"), str(path))
    values.update(overrides or {})
    return ExperimentConfig(**values)
