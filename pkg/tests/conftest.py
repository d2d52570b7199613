import math
import numpy as np
import pytest

from emorec.datasets import synthetic_ratings
from emorec.ingest import from_triples


@pytest.fixture
def tiny():
    # 3 users, 4 items; item 40 is unrated by user 1
    users = [1, 1, 1, 2, 2, 2, 2, 3, 3]
    items = [10, 20, 30, 10, 20, 30, 40, 10, 40]
    ratings = [5, 3, 1, 4, 2, 5, 1, 3, 2]
    return from_triples(users, items, ratings)


@pytest.fixture
def synthetic():
    return synthetic_ratings(n_users=60, n_items=30, n_ratings=900, seed=3, popularity_skew=1.0)


@pytest.fixture
def ratings_csv(tmp_path):
    def write(dataset, name="ratings.csv"):
        from emorec.ingest import write_triples_csv
        path = tmp_path / name
        write_triples_csv(dataset, path)
        return path
    return write


def brute_force_stats(items, ratings):
    """Per-item (mean, count) from plain Python loops."""
    acc = {}
    for j, r in zip(items, ratings):
        s, c = acc.get(j, (0.0, 0))
        acc[j] = (s + r, c + 1)
    return {j: (s / c, c) for j, (s, c) in acc.items()}


def assert_readonly(arr):
    with pytest.raises(ValueError):
        arr[0] = arr[0]


def pair_loss(u, v, target, popular, B, cos_floor):
    """Single-pair EMF loss written out directly from its definition."""
    t0, t1 = np.sqrt(u @ u), np.sqrt(v @ v)
    t2, t3 = t0 * t1, u @ v
    loss = (target - t3 / t2) ** 2
    if B == 0.0:
        return loss
    if popular:
        t3s = np.copysign(max(abs(t3), cos_floor * t2), t3)
        return loss - B * t2 / t3s
    return loss - B * t3 / t2


def fd_gradient(u, v, target, popular, B, cos_floor, h=1e-6):
    """Central differences of :func:`pair_loss` in every coordinate of u and v."""
    def partials(x, f):
        g = np.empty_like(x)
        for k in range(len(x)):
            xp, xm = x.copy(), x.copy()
            xp[k] += h
            xm[k] -= h
            g[k] = (f(xp) - f(xm)) / (2 * h)
        return g
    gu = partials(u, lambda x: pair_loss(x, v, target, popular, B, cos_floor))
    gv = partials(v, lambda x: pair_loss(u, x, target, popular, B, cos_floor))
    return gu, gv


def naive_emotion(users, items, ratings, popular_of):
    """ES per observed cell and its normalized log, from plain loops."""
    stats = brute_force_stats(items, ratings)
    raw = {}
    for i, j, r in zip(users, items, ratings):
        mean, count = stats[j]
        raw[(i, j)] = (1.0 / r) / (mean * count) if popular_of[j] else r / (mean * count)
    logs = {k: math.log(e) for k, e in raw.items()}
    lo, hi = min(logs.values()), max(logs.values())
    norm = {k: (0.5 if hi == lo else (x - lo) / (hi - lo)) for k, x in logs.items()}
    return raw, norm
