"""Per-item popularity statistics and the Popular/Obscure split."""

import csv
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .errors import ConfigError, ValidationError


class Popularity(Enum):
    POPULAR = "Popular"
    OBSCURE = "Obscure"


@dataclass(frozen=True)
class PopularityThresholds:
    score_quantile: float = 0.5
    count_quantile: float = 0.5

    def __post_init__(self):
        for name in ("score_quantile", "count_quantile"):
            q = getattr(self, name)
            if not 0.0 <= q <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {q}")


@dataclass(frozen=True, eq=False)
class ItemStats:
    """Mean rating and rating count for every item rated in a split.

    Arrays are dense over the dataset's ``n_items``; ``rated`` marks which
    items actually have statistics.  ``popular`` is None until
    :func:`classify` has run.
    """

    score: np.ndarray
    count: np.ndarray
    rated: np.ndarray
    popular: np.ndarray | None = None
    thresholds: PopularityThresholds | None = None
    score_threshold: float | None = None
    count_threshold: float | None = None

    @property
    def n_rated(self):
        return int(self.rated.sum())

    @property
    def is_classified(self):
        return self.popular is not None

    def popularity(self, j):
        if not self.rated[j]:
            raise KeyError(f"item {j} has no statistics")
        if self.popular is None:
            raise ValidationError("item statistics are not classified")
        return Popularity.POPULAR if self.popular[j] else Popularity.OBSCURE


def compute_item_stats(train):
    if len(train) == 0:
        raise ValidationError("cannot compute item statistics on an empty dataset")
    m = train.n_items
    count = np.bincount(train.item_idx, minlength=m)
    total = np.bincount(train.item_idx, weights=train.ratings, minlength=m)
    rated = count > 0
    score = np.zeros(m)
    score[rated] = total[rated] / count[rated]
    return ItemStats(score=score, count=count.astype(np.int64), rated=rated)


def nearest_rank(values, q):
    """Order statistic at position ``round(q * (n - 1))`` (halves round up)."""
    ordered = np.sort(np.asarray(values))
    pos = int(np.floor(q * (len(ordered) - 1) + 0.5))
    return ordered[pos]


def classify(stats, thresholds=PopularityThresholds()):
    """Popular iff score >= score threshold OR count >= count threshold."""
    if stats.n_rated == 0:
        raise ValidationError("cannot classify empty item statistics")
    tau_s = float(nearest_rank(stats.score[stats.rated], thresholds.score_quantile))
    tau_c = float(nearest_rank(stats.count[stats.rated], thresholds.count_quantile))
    popular = stats.rated & ((stats.score >= tau_s) | (stats.count >= tau_c))
    return replace(stats, popular=popular, thresholds=thresholds,
                   score_threshold=tau_s, count_threshold=tau_c)


def write_stats_csv(stats, item_ids, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["item_id", "score", "count", "class"])
        for j in np.flatnonzero(stats.rated):
            label = stats.popularity(j).value if stats.is_classified else ""
            writer.writerow([int(item_ids[j]), repr(float(stats.score[j])),
                             int(stats.count[j]), label])
