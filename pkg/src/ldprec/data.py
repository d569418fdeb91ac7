"""Sparse rating matrices and loaders for the public rating datasets."""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import JESTER, LIBIMSETI, MOVIELENS, RatingDomain
from .errors import DataFormatError, DomainError, DuplicateEntryError, EmptyDatasetError

log = logging.getLogger(__name__)

JESTER_MISSING = 99.0


@dataclass(frozen=True, eq=False)
class SparseRatingMatrix:
    """Observed ``(user, item, rating)`` triples of an ``m x n`` rating matrix.

    Indices are dense and 0-based. ``user_labels``/``item_labels`` keep the
    identifiers from the source file so that subsets and permutations can
    still be traced back to the same logical user or item.
    """

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    domain: RatingDomain
    user_labels: np.ndarray = field(default=None)
    item_labels: np.ndarray = field(default=None)

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.int64)
        items = np.asarray(self.items, dtype=np.int64)
        ratings = np.asarray(self.ratings, dtype=float)
        if not (users.shape == items.shape == ratings.shape) or users.ndim != 1:
            raise ValueError("users, items and ratings must be 1-d arrays of equal length")
        if users.size:
            if users.min() < 0 or users.max() >= self.num_users:
                raise IndexError("user index out of range")
            if items.min() < 0 or items.max() >= self.num_items:
                raise IndexError("item index out of range")
        self.domain.check(ratings)
        ulab = np.arange(self.num_users) if self.user_labels is None else np.asarray(self.user_labels)
        ilab = np.arange(self.num_items) if self.item_labels is None else np.asarray(self.item_labels)
        if ulab.shape != (self.num_users,) or ilab.shape != (self.num_items,):
            raise ValueError("label arrays must match the matrix dimensions")
        for name, val in (("users", users), ("items", items), ("ratings", ratings),
                          ("user_labels", ulab), ("item_labels", ilab)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    def __len__(self):
        return self.ratings.size

    @property
    def shape(self):
        return self.num_users, self.num_items

    @classmethod
    def from_triples(cls, users, items, ratings, domain, num_users=None, num_items=None,
                     check_duplicates=True):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        m = int(users.max()) + 1 if num_users is None else num_users
        n = int(items.max()) + 1 if num_items is None else num_items
        R = cls(m, n, users, items, ratings, domain)
        if check_duplicates:
            R.check_unique()
        return R

    def check_unique(self):
        key = self.users * self.num_items + self.items
        uniq, first, counts = np.unique(key, return_index=True, return_counts=True)
        if uniq.size != key.size:
            dup = first[np.argmax(counts > 1)]
            raise DuplicateEntryError(
                f"duplicate entry for user {self.users[dup]}, item {self.items[dup]}"
            )

    def with_ratings(self, ratings) -> "SparseRatingMatrix":
        """Same sparsity pattern, new values."""
        return SparseRatingMatrix(self.num_users, self.num_items, self.users, self.items,
                                  ratings, self.domain, self.user_labels, self.item_labels)

    def take(self, index) -> "SparseRatingMatrix":
        """Subset of entries; dimensions and labels are kept."""
        index = np.asarray(index)
        return SparseRatingMatrix(self.num_users, self.num_items, self.users[index],
                                  self.items[index], self.ratings[index], self.domain,
                                  self.user_labels, self.item_labels)

    def compact(self) -> "SparseRatingMatrix":
        """Drop users and items without entries and reindex densely."""
        u_keep, users = np.unique(self.users, return_inverse=True)
        i_keep, items = np.unique(self.items, return_inverse=True)
        return SparseRatingMatrix(u_keep.size, i_keep.size, users, items, self.ratings,
                                  self.domain, self.user_labels[u_keep], self.item_labels[i_keep])

    def to_dense(self, fill=np.nan) -> np.ndarray:
        out = np.full(self.shape, fill, dtype=float)
        out[self.users, self.items] = self.ratings
        return out

    def global_mean(self) -> float:
        return float(self.ratings.mean()) if len(self) else 0.5 * (self.domain.low + self.domain.high)


def file_digest(path, length: int = 12) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:length]


def _remap(raw_users, raw_items, ratings, domain, source):
    if not ratings:
        raise EmptyDatasetError(f"no ratings found in {source}")
    ulab, users = np.unique(np.asarray(raw_users), return_inverse=True)
    ilab, items = np.unique(np.asarray(raw_items), return_inverse=True)
    R = SparseRatingMatrix(ulab.size, ilab.size, users, items, np.asarray(ratings, float),
                           domain, ulab, ilab)
    R.check_unique()
    return R


def _parse_triples(path, sep, domain, min_fields, skip_header=False):
    users, items, ratings = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if skip_header and lineno == 1:
                continue
            parts = line.rstrip("\r\n").split(sep) if sep else line.split()
            if len(parts) < min_fields:
                raise DataFormatError(f"expected {min_fields} fields, got {len(parts)}", lineno)
            try:
                u, i, r = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise DataFormatError(f"bad value ({exc})", lineno) from None
            if not domain.contains(r):
                raise DomainError(f"line {lineno}: rating {r} outside [{domain.low}, {domain.high}]")
            users.append(u)
            items.append(i)
            ratings.append(r)
    return users, items, ratings


def load_movielens(path, domain: RatingDomain = MOVIELENS) -> SparseRatingMatrix:
    """Read a Movielens ``u.data`` file (``user\\titem\\trating\\ttimestamp``).

    A single header line (as shipped in some redistributions) is skipped.
    """
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    header = bool(first.strip()) and not first.split("\t")[0].strip().isdigit()
    users, items, ratings = _parse_triples(path, "\t", domain, 3, skip_header=header)
    R = _remap(users, items, ratings, domain, path)
    # the public 100k file is integer 1-5 while the nominal scale starts at 0.5
    log.info("movielens: %d ratings, %d users, %d items, observed range [%g, %g] within [%g, %g]",
             len(R), R.num_users, R.num_items, R.ratings.min(), R.ratings.max(),
             domain.low, domain.high)
    return R


def load_libimseti(path, domain: RatingDomain = LIBIMSETI) -> SparseRatingMatrix:
    """Read Libimseti ``ratings.dat`` (``user,item,rating``, no header)."""
    users, items, ratings = _parse_triples(path, ",", domain, 3)
    return _remap(users, items, ratings, domain, path)


def load_jester(path, domain: RatingDomain = JESTER, missing: float = JESTER_MISSING,
                has_count_column: bool = True) -> SparseRatingMatrix:
    """Read Jester dense rows: optional rated-count column, then one score per joke.

    Values may be separated by commas, tabs or whitespace; ``missing`` (99)
    marks an unrated joke.
    """
    users, items, ratings = [], [], []
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            parts = text.replace(",", " ").replace(";", " ").split()
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise DataFormatError(f"bad value ({exc})", lineno) from None
            if has_count_column:
                vals = vals[1:]
            width = len(vals) if width is None else width
            for j, v in enumerate(vals):
                if v == missing:
                    continue
                if not domain.contains(v):
                    raise DomainError(f"line {lineno}: rating {v} outside [{domain.low}, {domain.high}]")
                users.append(lineno)
                items.append(j)
                ratings.append(v)
    return _remap(users, items, ratings, domain, path)


def subsample(R: SparseRatingMatrix, fraction: float | None = None, max_entries: int | None = None,
              seed: int = 0) -> SparseRatingMatrix:
    """Uniform random subset of entries with dense reindexing.

    ``fraction`` keeps ``round(fraction * len(R))`` entries exactly;
    ``max_entries`` caps the count instead.
    """
    if fraction is None and max_entries is None:
        raise ValueError("give fraction or max_entries")
    count = len(R)
    if fraction is not None:
        if not 0 < fraction <= 1:
            raise ValueError(f"fraction must be in (0, 1], got {fraction}")
        count = int(round(fraction * len(R)))
    if max_entries is not None:
        count = min(count, max_entries)
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(R), size=count, replace=False))
    return R.take(keep).compact()


def save_canonical(R: SparseRatingMatrix, path) -> None:
    """Write ``m,n`` / ``low,high`` header lines then one ``i,j,r`` line per entry.

    Ratings use ``repr`` so reading them back is exact.
    """
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{R.num_users},{R.num_items}\n{R.domain.low!r},{R.domain.high!r}\n")
        for i, j, r in zip(R.users.tolist(), R.items.tolist(), R.ratings.tolist()):
            fh.write(f"{i},{j},{r!r}\n")


def load_canonical(path, ranks_step: float | None = None) -> SparseRatingMatrix:
    with open(path, encoding="utf-8") as fh:
        try:
            m, n = (int(x) for x in fh.readline().split(","))
            low, high = (float(x) for x in fh.readline().split(","))
        except ValueError:
            raise DataFormatError("bad canonical header", 1) from None
    domain = RatingDomain.with_step(low, high, ranks_step) if ranks_step else RatingDomain(low, high)
    users, items, ratings = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno <= 2 or not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise DataFormatError("expected i,j,r", lineno)
            try:
                users.append(int(parts[0]))
                items.append(int(parts[1]))
                ratings.append(float(parts[2]))
            except ValueError as exc:
                raise DataFormatError(f"bad value ({exc})", lineno) from None
    return SparseRatingMatrix.from_triples(users, items, ratings, domain, m, n)


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    domain: RatingDomain
    loader: object
    default_file: str


DATASETS = {
    "movielens": DatasetSpec("movielens", MOVIELENS, load_movielens, "u.data"),
    "jester": DatasetSpec("jester", JESTER, load_jester, "jester.csv"),
    "libimseti": DatasetSpec("libimseti", LIBIMSETI, load_libimseti, "ratings.dat"),
}


def load_dataset(name: str, path) -> SparseRatingMatrix:
    try:
        spec = DATASETS[name]
    except KeyError:
        raise ValueError(f"unknown dataset {name!r}; choose from {sorted(DATASETS)}") from None
    path = Path(path)
    if path.is_dir():
        path = path / spec.default_file
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    return spec.loader(path)


def default_movielens_path() -> Path | None:
    """Location of Movielens 100k: ``$LDPREC_MOVIELENS`` or ``data/ml-100k/u.data``."""
    env = os.environ.get("LDPREC_MOVIELENS")
    candidates = [Path(env)] if env else []
    candidates.append(Path(__file__).resolve().parents[2] / "data" / "ml-100k" / "u.data")
    for c in candidates:
        if c.exists():
            return c
    return None
