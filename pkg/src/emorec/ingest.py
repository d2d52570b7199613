"""Rating-log parsing, canonical triple export and deterministic splitting.

Two input formats are understood: the MovieLens ``.dat`` layout
(``UserID::MovieID::Rating::Timestamp``) and a generic delimited file with a
header row.  Both produce a :class:`RatingDataset` with dense internal
indices; the external ids stay available for reporting.
"""

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, ValidationError

logger = logging.getLogger(__name__)

_TITLE_YEAR = re.compile(r"^(.*)\s+\((\d{4})\)\s*$")


@dataclass(frozen=True, eq=False)
class RatingDataset:
    """Sparse (user, item, rating) triples over dense indices.

    ``user_ids[k]`` is the external id of internal user ``k`` (same for
    items).  Arrays are made read-only on construction.
    """

    user_ids: np.ndarray
    item_ids: np.ndarray
    user_idx: np.ndarray
    item_idx: np.ndarray
    ratings: np.ndarray
    max_rating: float = 5.0
    duplicates_dropped: int = 0

    def __post_init__(self):
        for name in ("user_ids", "item_ids", "user_idx", "item_idx"):
            object.__setattr__(self, name, _frozen(getattr(self, name), np.int64))
        object.__setattr__(self, "ratings", _frozen(self.ratings, np.float64))
        object.__setattr__(self, "max_rating", float(self.max_rating))
        self._validate()

    def _validate(self):
        n = len(self.ratings)
        if len(self.user_idx) != n or len(self.item_idx) != n:
            raise ValidationError("triple arrays have different lengths")
        if self.max_rating <= 0:
            raise ValidationError(f"max_rating must be positive, got {self.max_rating}")
        if n == 0:
            return
        if self.user_idx.min() < 0 or self.user_idx.max() >= self.n_users:
            raise ValidationError("user index out of range")
        if self.item_idx.min() < 0 or self.item_idx.max() >= self.n_items:
            raise ValidationError("item index out of range")
        bad = (self.ratings <= 0) | (self.ratings > self.max_rating) | ~np.isfinite(self.ratings)
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            raise ValidationError(
                f"rating {self.ratings[k]} outside (0, {self.max_rating}] at triple {k}")
        keys = self.user_idx * max(self.n_items, 1) + self.item_idx
        if len(np.unique(keys)) != n:
            raise ValidationError("duplicate (user, item) pair")

    @property
    def n_users(self):
        return len(self.user_ids)

    @property
    def n_items(self):
        return len(self.item_ids)

    def __len__(self):
        return len(self.ratings)

    def __eq__(self, other):
        if not isinstance(other, RatingDataset):
            return NotImplemented
        return (self.max_rating == other.max_rating
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("user_ids", "item_ids", "user_idx", "item_idx", "ratings")))

    __hash__ = None

    def subset(self, mask):
        """Triples selected by ``mask``; the id maps are shared, not reindexed."""
        mask = np.asarray(mask)
        return RatingDataset(self.user_ids, self.item_ids, self.user_idx[mask],
                             self.item_idx[mask], self.ratings[mask], self.max_rating)

    def compact(self):
        """Drop users and items with no triples and renumber densely."""
        users, uinv = np.unique(self.user_idx, return_inverse=True)
        items, iinv = np.unique(self.item_idx, return_inverse=True)
        return RatingDataset(self.user_ids[users], self.item_ids[items], uinv, iinv,
                             self.ratings, self.max_rating)

    def seen_by_user(self):
        """CSR-style ``(indptr, items)`` of the items each user rated."""
        order = np.lexsort((self.item_idx, self.user_idx))
        counts = np.bincount(self.user_idx, minlength=self.n_users)
        indptr = np.concatenate(([0], np.cumsum(counts)))
        return indptr, self.item_idx[order]


@dataclass(frozen=True)
class CatalogEntry:
    title: str
    year: int | None
    genres: tuple[str, ...]


@dataclass
class ItemCatalog:
    """Item metadata keyed by internal item index."""

    entries: dict[int, CatalogEntry] = field(default_factory=dict)

    def get(self, item_index):
        return self.entries.get(item_index)

    def __len__(self):
        return len(self.entries)


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")


@dataclass(frozen=True)
class ColumnSpec:
    """Which columns of a delimited file hold the user, item and rating."""

    user: str = "user_id"
    item: str = "item_id"
    rating: str = "rating"
    max_rating: float = 5.0
    delimiter: str = ","


def _frozen(values, dtype):
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _decode(raw):
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        return raw.decode("cp1252", errors="replace")


def from_triples(users, items, ratings, max_rating=5.0, lines=None, label="line"):
    """Build a dataset from external-id triples given in file order.

    Duplicate (user, item) pairs keep the last occurrence.  ``lines`` maps
    each triple back to its source line for error messages.
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    ratings = np.asarray(ratings, dtype=np.float64)
    bad = (ratings <= 0) | (ratings > max_rating) | ~np.isfinite(ratings)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        where = f"{label} {lines[k]}" if lines is not None else f"triple {k}"
        raise ValidationError(f"{where}: rating {ratings[k]} outside (0, {max_rating}]")

    user_ids, uidx = np.unique(users, return_inverse=True)
    item_ids, iidx = np.unique(items, return_inverse=True)
    dropped = 0
    if len(ratings):
        keys = uidx * len(item_ids) + iidx
        # last occurrence of each key wins
        _, rev_first = np.unique(keys[::-1], return_index=True)
        keep = np.sort(len(keys) - 1 - rev_first)
        dropped = len(keys) - len(keep)
        if dropped:
            logger.warning("dropped %d duplicate (user, item) ratings (kept last)", dropped)
            uidx, iidx, ratings = uidx[keep], iidx[keep], ratings[keep]
    return RatingDataset(user_ids, item_ids, uidx, iidx, ratings, max_rating, dropped)


def parse_movielens(ratings_path, movies_path=None):
    """Parse MovieLens ``ratings.dat`` (and optionally ``movies.dat``).

    Timestamps are validated as integers and discarded.
    """
    text = _decode(Path(ratings_path).read_bytes())
    users, items, ratings, lines = [], [], [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("::")
        if len(parts) != 4:
            raise ParseError(f"expected 4 '::'-separated fields, got {len(parts)}", lineno)
        try:
            users.append(int(parts[0]))
            items.append(int(parts[1]))
            ratings.append(float(parts[2]))
            int(parts[3])
        except ValueError as exc:
            raise ParseError(f"malformed field ({exc})", lineno) from None
        lines.append(lineno)
    dataset = from_triples(users, items, ratings, 5.0, lines)

    catalog = ItemCatalog()
    if movies_path is not None:
        catalog = parse_movielens_movies(movies_path, dataset)
    return dataset, catalog


def parse_movielens_movies(movies_path, dataset):
    """Parse ``MovieID::Title (Year)::Genre|Genre`` lines into a catalog."""
    index_of = {int(ext): k for k, ext in enumerate(dataset.item_ids)}
    text = _decode(Path(movies_path).read_bytes())
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("::")
        if len(parts) != 3:
            raise ParseError(f"expected 3 '::'-separated fields, got {len(parts)}", lineno)
        try:
            movie_id = int(parts[0])
        except ValueError:
            raise ParseError(f"malformed movie id {parts[0]!r}", lineno) from None
        if movie_id not in index_of:
            continue
        title, year = split_title_year(parts[1])
        genres = tuple(g for g in parts[2].split("|") if g)
        entries[index_of[movie_id]] = CatalogEntry(title, year, genres)
    return ItemCatalog(entries)


def split_title_year(raw):
    m = _TITLE_YEAR.match(raw.strip())
    if m:
        return m.group(1), int(m.group(2))
    return raw.strip(), None


def parse_csv_ratings(path, columns=ColumnSpec()):
    """Parse a delimited file with a header row; unnamed columns are ignored.

    Rows are numbered from 1 after the header in error messages.
    """
    text = _decode(Path(path).read_bytes())
    reader = csv.DictReader(text.splitlines(), delimiter=columns.delimiter)
    header = reader.fieldnames or []
    if text.strip():
        missing = [c for c in (columns.user, columns.item, columns.rating) if c not in header]
        if missing:
            raise ConfigError(f"missing column(s) {missing}; header has {header}")
    users, items, ratings, rows = [], [], [], []
    for row_no, row in enumerate(reader, start=1):
        try:
            users.append(int(row[columns.user]))
            items.append(int(row[columns.item]))
        except (TypeError, ValueError):
            raise ParseError(f"row {row_no}: non-integer user or item id") from None
        cell = row[columns.rating]
        try:
            ratings.append(float(cell))
        except (TypeError, ValueError):
            raise ParseError(f"row {row_no}: non-numeric rating {cell!r}") from None
        rows.append(row_no)
    return from_triples(users, items, ratings, columns.max_rating, rows, label="row")


def write_triples_csv(dataset, path):
    """Canonical export: ``user_id,item_id,rating`` with LF endings."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("user_id,item_id,rating\n")
        uid = dataset.user_ids[dataset.user_idx]
        iid = dataset.item_ids[dataset.item_idx]
        for u, i, r in zip(uid.tolist(), iid.tolist(), dataset.ratings.tolist()):
            fh.write(f"{u},{i},{r!r}\n")


def read_triples_csv(path, max_rating=5.0):
    return parse_csv_ratings(path, ColumnSpec(max_rating=max_rating))


def split(dataset, spec):
    """Seeded per-triple uniform assignment into (train, test)."""
    if len(dataset) == 0:
        raise ValidationError("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    is_test = rng.random(len(dataset)) < spec.test_fraction
    return dataset.subset(~is_test), dataset.subset(is_test)


def subsample(dataset, n, seed):
    """Seeded uniform subsample of ``n`` triples, renumbered densely."""
    if n <= 0:
        raise ConfigError(f"subsample size must be positive, got {n}")
    if n >= len(dataset):
        return dataset
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(dataset), size=n, replace=False))
    return dataset.subset(keep).compact()
