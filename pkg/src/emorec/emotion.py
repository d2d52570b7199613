"""Emotional Scores and the emotion matrix.

A user disliking a popular item, or liking an obscure one, is read as an
emotional reaction.  For an item with mean rating ``score`` and rating count
``count``::

    popular item:  ES = (1 / r) / (score * count)
    obscure item:  ES = r / (score * count)

Scores span several orders of magnitude, so the matrix stores
``log(ES)`` min-max scaled over the observed cells; unobserved cells are 0.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ValidationError
from .item_stats import Popularity

RANK_MODES = ("intensity", "score", "raw")


def emotional_score(rating, stats, j):
    """ES of a single observed rating ``rating`` of item ``j``."""
    if not rating > 0:
        raise ValidationError(f"rating must be positive, got {rating}")
    denom = stats.score[j] * stats.count[j]
    if stats.popularity(j) is Popularity.POPULAR:
        return (1.0 / rating) / denom
    return rating / denom


def emotional_scores(ratings, items, stats):
    """Vectorized :func:`emotional_score` over parallel arrays."""
    ratings = np.asarray(ratings, dtype=np.float64)
    items = np.asarray(items)
    if stats.popular is None:
        raise ValidationError("item statistics are not classified")
    if np.any(ratings <= 0):
        raise ValidationError("ratings must be positive")
    if not np.all(stats.rated[items]):
        missing = items[~stats.rated[items]][0]
        raise ValidationError(f"item {missing} has no statistics")
    denom = stats.score[items] * stats.count[items]
    return np.where(stats.popular[items], 1.0 / ratings, ratings) / denom


@dataclass(frozen=True, eq=False)
class EmotionMatrix:
    """Observed-cell Emotional Scores with their normalized log values.

    Only observed cells are stored; :meth:`dense` materializes the N x M
    array with 0 in the unobserved cells.
    """

    user_idx: np.ndarray
    item_idx: np.ndarray
    raw: np.ndarray
    normalized: np.ndarray
    shape: tuple[int, int]
    user_ids: np.ndarray
    item_ids: np.ndarray
    thresholds_used: object = None

    def dense(self):
        out = np.zeros(self.shape)
        out[self.user_idx, self.item_idx] = self.normalized
        return out

    def raw_map(self):
        return {(int(i), int(j)): float(e)
                for i, j, e in zip(self.user_idx, self.item_idx, self.raw)}


def normalize_log(raw):
    """Min-max scale ``log(raw)`` to [0, 1]; a zero range maps to 0.5."""
    logs = np.log(raw)
    if len(logs) == 0:
        return logs
    lo, hi = logs.min(), logs.max()
    if hi == lo:
        return np.full_like(logs, 0.5)
    return (logs - lo) / (hi - lo)


def build_emotion_matrix(dataset, stats):
    raw = emotional_scores(dataset.ratings, dataset.item_idx, stats)
    return EmotionMatrix(
        user_idx=dataset.user_idx,
        item_idx=dataset.item_idx,
        raw=raw,
        normalized=normalize_log(raw),
        shape=(dataset.n_users, dataset.n_items),
        user_ids=dataset.user_ids,
        item_ids=dataset.item_ids,
        thresholds_used=stats.thresholds,
    )


@dataclass(frozen=True)
class RankedItem:
    item_index: int
    item_id: int
    mean_es: float
    n_ratings: int
    title: str | None = None
    year: int | None = None
    genres: tuple[str, ...] = ()


def item_means(matrix, by="intensity"):
    """Per-item mean over observed cells, and the number of cells averaged.

    ``by`` selects the averaged quantity: ``"score"`` is the normalized
    log-ES itself, ``"intensity"`` its complement ``1 - normalized`` (the
    scaled magnitude of log-ES, largest for the most decisive reactions to
    widely rated items), ``"raw"`` the unnormalized ES.
    """
    if by not in RANK_MODES:
        raise ConfigError(f"unknown ranking mode {by!r}; expected one of {RANK_MODES}")
    values = {"score": matrix.normalized,
              "intensity": 1.0 - matrix.normalized,
              "raw": matrix.raw}[by]
    m = matrix.shape[1]
    counts = np.bincount(matrix.item_idx, minlength=m)
    sums = np.bincount(matrix.item_idx, weights=values, minlength=m)
    means = np.full(m, np.nan)
    seen = counts > 0
    means[seen] = sums[seen] / counts[seen]
    return means, counts


def rank_emotional_items(matrix, catalog=None, k=10, by="intensity"):
    """Top-``k`` items by mean emotional value, ties by ascending external id."""
    if k <= 0:
        raise ConfigError(f"k must be positive, got {k}")
    means, counts = item_means(matrix, by)
    seen = np.flatnonzero(counts > 0)
    order = seen[np.lexsort((matrix.item_ids[seen], -means[seen]))]
    ranking = []
    for j in order[:k]:
        entry = catalog.get(int(j)) if catalog is not None else None
        ranking.append(RankedItem(
            item_index=int(j),
            item_id=int(matrix.item_ids[j]),
            mean_es=float(means[j]),
            n_ratings=int(counts[j]),
            title=entry.title if entry else None,
            year=entry.year if entry else None,
            genres=entry.genres if entry else (),
        ))
    return ranking


def write_es_csv(matrix, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("user_id,item_id,raw_es,normalized_es\n")
        uid = matrix.user_ids[matrix.user_idx].tolist()
        iid = matrix.item_ids[matrix.item_idx].tolist()
        for u, i, e, n in zip(uid, iid, matrix.raw.tolist(), matrix.normalized.tolist()):
            fh.write(f"{u},{i},{e!r},{n!r}\n")


def write_ranking_csv(ranking, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["title", "year", "genres", "mean_es"])
        for item in ranking:
            title = item.title if item.title is not None else f"item {item.item_id}"
            year = "" if item.year is None else item.year
            writer.writerow([title, year, "|".join(item.genres), repr(item.mean_es)])
