"""Dataset locators and a seeded synthetic rating generator.

MovieLens 1M is read from a local ``ml-1m`` directory.  MovieLens 100K can be
extracted from the RecBole wheel on PyPI, which ships it as tab-separated
"atomic" files (``ml-100k.inter`` / ``ml-100k.item``).
"""

import io
import json
import logging
import os
import urllib.request
import zipfile
from pathlib import Path
from urllib.parse import urljoin

import numpy as np

from .ingest import CatalogEntry, ColumnSpec, ItemCatalog, from_triples, parse_csv_ratings, parse_movielens

logger = logging.getLogger(__name__)

DATA_HOME_ENV = "EMOREC_DATA"
ML1M_ENV = "EMOREC_ML1M"
RECBOLE_PACKAGE = "recbole"
RECBOLE_VERSION = "1.2.1"
ML100K_COLUMNS = ColumnSpec(user="user_id:token", item="item_id:token",
                            rating="rating:float", delimiter="\t")


def data_home():
    default = Path(__file__).resolve().parents[2] / "data"
    return Path(os.environ.get(DATA_HOME_ENV, default))


def ml1m_dir():
    """Directory holding ``ratings.dat``/``movies.dat``, or None if absent."""
    candidates = [os.environ.get(ML1M_ENV), data_home() / "ml-1m"]
    for c in candidates:
        if c and (Path(c) / "ratings.dat").is_file():
            return Path(c)
    return None


def load_ml1m(directory=None):
    directory = Path(directory) if directory else ml1m_dir()
    if directory is None:
        raise FileNotFoundError(
            f"MovieLens 1M not found; set {ML1M_ENV} or unpack ml-1m into {data_home()}")
    movies = directory / "movies.dat"
    return parse_movielens(directory / "ratings.dat", movies if movies.is_file() else None)


def fetch_ml100k(dest=None, timeout=120):
    """Extract MovieLens 100K from the RecBole wheel into ``dest/ml-100k``."""
    dest = Path(dest or data_home()) / "ml-100k"
    inter = dest / "ml-100k.inter"
    if inter.is_file():
        return dest
    meta_url = f"https://pypi.org/pypi/{RECBOLE_PACKAGE}/json"
    with urllib.request.urlopen(meta_url, timeout=timeout) as resp:
        meta = json.load(resp)
    wanted = f"{RECBOLE_PACKAGE}-{RECBOLE_VERSION}-py3-none-any.whl"
    files = meta["releases"].get(RECBOLE_VERSION) or meta["urls"]
    wheel = next(f for f in files if f["filename"] == wanted)
    logger.info("downloading %s", wheel["filename"])
    # some mirrors hand out relative file URLs
    with urllib.request.urlopen(urljoin(meta_url, wheel["url"]), timeout=timeout) as resp:
        blob = resp.read()
    dest.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        for name in ("ml-100k.inter", "ml-100k.item"):
            (dest / name).write_bytes(zf.read(f"recbole/dataset_example/ml-100k/{name}"))
    return dest


def load_ml100k(directory=None):
    directory = Path(directory) if directory else fetch_ml100k()
    dataset = parse_csv_ratings(directory / "ml-100k.inter", ML100K_COLUMNS)
    catalog = ItemCatalog()
    item_file = directory / "ml-100k.item"
    if item_file.is_file():
        catalog = _recbole_catalog(item_file, dataset)
    return dataset, catalog


def _recbole_catalog(path, dataset):
    index_of = {int(ext): k for k, ext in enumerate(dataset.item_ids)}
    entries = {}
    lines = path.read_bytes().decode("utf-8", errors="replace").splitlines()
    for line in lines[1:]:
        fields = line.split("\t")
        if len(fields) < 4 or not fields[0].isdigit():
            continue
        j = index_of.get(int(fields[0]))
        if j is None:
            continue
        year = int(fields[2]) if fields[2].isdigit() else None
        entries[j] = CatalogEntry(fields[1], year, tuple(fields[3].split()))
    return ItemCatalog(entries)


def synthetic_ratings(n_users=100, n_items=40, n_ratings=1000, rank=3, seed=0,
                      max_rating=5.0, popularity_skew=0.0):
    """Low-rank ratings on a random subset of cells, rounded to 1..max_rating.

    ``popularity_skew > 0`` samples items with Zipf-like weights so counts
    are long-tailed.
    """
    rng = np.random.default_rng(seed)
    if n_ratings > n_users * n_items:
        raise ValueError("more ratings requested than cells")
    weights = np.ones(n_users * n_items)
    if popularity_skew > 0:
        item_w = 1.0 / np.arange(1, n_items + 1) ** popularity_skew
        weights = np.tile(item_w[rng.permutation(n_items)], n_users)
    cells = rng.choice(n_users * n_items, size=n_ratings, replace=False, p=weights / weights.sum())
    users, items = cells // n_items, cells % n_items
    A = rng.random((n_users, rank))
    B = rng.random((n_items, rank))
    raw = np.einsum("ij,ij->i", A[users], B[items])
    span = np.ptp(raw) or 1.0
    ratings = np.clip(np.round(1 + (max_rating - 1) * (raw - raw.min()) / span), 1, max_rating)
    return from_triples(users, items, ratings, max_rating)
