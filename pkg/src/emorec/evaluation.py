"""Accuracy (MAE) and popularity-concentration (Degree of Matthew Effect) metrics.

The Degree of Matthew Effect (DME) measures how unevenly top-k
recommendations are spread over items: exposures are tallied per item,
sorted into a rank/frequency table, and DME is the absolute slope of the
least-squares line through ``(log rank, log exposure)``.  Uniform exposure
gives 0; an exact Zipf law ``e ~ 1/rank`` gives 1.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass, replace

import numpy as np

from .errors import EmorecError, ValidationError
from .factorization import TrainConfig, random_baseline, train_emf, train_mf
from .item_stats import PopularityThresholds, classify, compute_item_stats
from .seeding import sub_seed

logger = logging.getLogger(__name__)

ALGORITHMS = ("mf", "emf", "random")
_USER_CHUNK = 512


def _predict_pairs(predictor, users, items):
    if hasattr(predictor, "predict_pairs"):
        return np.asarray(predictor.predict_pairs(users, items), dtype=np.float64)
    return np.array([predictor.predict(int(i), int(j)) for i, j in zip(users, items)])


def _predict_users(predictor, users, n_items):
    if hasattr(predictor, "predict_users"):
        return np.asarray(predictor.predict_users(users), dtype=np.float64)
    return np.array([[predictor.predict(int(i), j) for j in range(n_items)] for i in users])


def mae(predictor, test):
    if len(test) == 0:
        raise ValidationError("MAE needs a non-empty test set")
    pred = _predict_pairs(predictor, test.user_idx, test.item_idx)
    return float(np.mean(np.abs(test.ratings - pred)))


def exposure_counts(predictor, users, train, top_k):
    """How often each item lands in the users' top-k lists.

    Candidates are the items a user did not rate in ``train``; ties in
    predicted rating go to the smaller item index.
    """
    if top_k < 1:
        raise ValidationError(f"top_k must be >= 1, got {top_k}")
    m = train.n_items
    indptr, seen_items = train.seen_by_user()
    users = np.unique(np.asarray(users, dtype=np.int64))
    exposures = np.zeros(m, dtype=np.int64)
    eligible = 0
    for start in range(0, len(users), _USER_CHUNK):
        chunk = users[start:start + _USER_CHUNK]
        neg = -_predict_users(predictor, chunk, m)
        for row, u in enumerate(chunk):
            neg[row, seen_items[indptr[u]:indptr[u + 1]]] = np.inf
        order = np.argsort(neg, axis=1, kind="stable")[:, :top_k]
        picked = np.take_along_axis(neg, order, axis=1) < np.inf
        eligible += int(np.count_nonzero(picked.any(axis=1)))
        exposures += np.bincount(order[picked], minlength=m)
    if eligible == 0:
        raise ValidationError("no user has an unrated item to recommend")
    return exposures


def zipf_slope(exposures):
    """Absolute slope of log(exposure) against log(rank) over exposed items."""
    e = np.sort(np.asarray(exposures, dtype=np.float64))[::-1]
    e = e[e > 0]
    if len(e) < 2:
        return 0.0
    x = np.log(np.arange(1, len(e) + 1))
    # relative to the top item, so equal exposures give exact zeros
    y = np.log(e) - np.log(e[0])
    xc = x - x.mean()
    slope = np.dot(xc, y) / np.dot(xc, xc)
    return float(abs(slope))


def degree_of_matthew_effect(predictor, users, train, top_k=10):
    return zipf_slope(exposure_counts(predictor, users, train, top_k))


@dataclass(frozen=True)
class EvalReport:
    algorithm: str
    mae: float
    dme: float
    top_k: int
    seed: int
    dataset_id: str
    emotion_weight: float
    config_snapshot: str

    def to_dict(self):
        return asdict(self)


class ComparisonError(EmorecError):
    def __init__(self, reports, failures):
        self.reports = reports
        self.failures = failures
        names = ", ".join(f"{name}: {err}" for name, err in failures)
        super().__init__(f"{len(failures)} algorithm(s) failed ({names})")


def _expand(algorithms, config, lambda_grid):
    runs = []
    for name in algorithms:
        if name not in ALGORITHMS:
            raise ValidationError(f"unknown algorithm {name!r}; expected one of {ALGORITHMS}")
        if name == "emf":
            grid = lambda_grid if lambda_grid else [config.emotion_weight]
            runs.extend(("emf", float(lam)) for lam in grid)
        else:
            runs.append((name, 0.0))
    return runs


def run_comparison(train, test, algorithms=ALGORITHMS, config=None, top_k=10,
                   lambda_grid=None, thresholds=PopularityThresholds(), dataset_id="",
                   dme_users="test"):
    """Train/instantiate each algorithm with one seed and score it on ``test``.

    A failing algorithm is logged and skipped; if any failed, a
    :class:`ComparisonError` carrying the successful reports is raised at
    the end.
    """
    config = config or TrainConfig()
    if not np.array_equal(train.item_ids, test.item_ids) or \
            not np.array_equal(train.user_ids, test.user_ids):
        raise ValidationError("train and test must share id maps")
    if dme_users == "test":
        users = np.unique(test.user_idx)
    elif dme_users == "all":
        users = np.arange(train.n_users)
    else:
        raise ValidationError(f"dme_users must be 'test' or 'all', got {dme_users!r}")

    stats = None
    reports, failures = [], []
    for name, lam in _expand(algorithms, config, lambda_grid):
        run_cfg = replace(config, emotion_weight=lam)
        try:
            if name == "mf":
                predictor = train_mf(train, run_cfg)
            elif name == "emf":
                if stats is None:
                    stats = classify(compute_item_stats(train), thresholds)
                predictor = train_emf(train, stats, run_cfg)
            else:
                predictor = random_baseline(sub_seed(config.seed, "random"),
                                            train.max_rating, train.n_items)
            err = mae(predictor, test)
            dme = degree_of_matthew_effect(predictor, users, train, top_k)
            if not (np.isfinite(err) and np.isfinite(dme)):
                raise ValidationError(f"non-finite metrics (mae={err}, dme={dme})")
        except EmorecError as exc:
            logger.error("algorithm %s (lambda=%g) failed: %s", name, lam, exc)
            failures.append((name, exc))
            continue
        snapshot = json.dumps({
            "algorithm": name,
            "train_config": run_cfg.to_dict() if name != "random" else {"seed": config.seed},
            "thresholds": asdict(thresholds),
            "top_k": top_k,
            "dme_users": dme_users,
            "evaluated_on": "held-out test split",
        }, sort_keys=True)
        reports.append(EvalReport(name, err, dme, top_k, config.seed, dataset_id, lam, snapshot))
        logger.info("%s lambda=%g: MAE %.4f DME %.4f", name, lam, err, dme)
    if failures:
        raise ComparisonError(reports, failures)
    return reports


COMPARISON_COLUMNS = ["algorithm", "mae", "dme", "seed", "lambda", "dataset"]


def write_comparison_csv(reports, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COMPARISON_COLUMNS)
        for r in reports:
            writer.writerow([r.algorithm, repr(r.mae), repr(r.dme), r.seed,
                             repr(r.emotion_weight), r.dataset_id])


def write_comparison_jsonl(reports, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_comparison_csv(path, top_k=10):
    """Reports from a comparison CSV (snapshots are not stored there)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [EvalReport(row["algorithm"], float(row["mae"]), float(row["dme"]), top_k,
                       int(row["seed"]), row["dataset"], float(row["lambda"]), "")
            for row in rows]
