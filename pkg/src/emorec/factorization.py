"""Cosine matrix factorization with an optional emotion regularizer (EMF).

The model predicts the affinity of user ``i`` for item ``j`` as the cosine
``c = U_i . V_j / (|U_i| |V_j|)`` and fits ``c`` to ``r / max_rating``.  EMF
subtracts ``lambda`` times a model-side Emotional Score from each squared
error, with the predicted cosine standing in for the rating::

    popular item:  L_ij = (r/max - c)^2 - lambda / (score_j count_j) / c
    obscure item:  L_ij = (r/max - c)^2 - lambda / (score_j count_j) * c

Training is plain per-triple SGD in descent form, ``U_i -= lr * dL/dU_i``.
With ``lambda = 0`` EMF runs exactly the classic-MF code path.
"""

import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from numba import njit

from .errors import ConfigError, NumericalError, ValidationError
from .seeding import rng_for

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"EMFMODEL"
MODEL_FORMAT_VERSION = 1
_JITTER_POOL = 4096


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 16
    learning_rate: float = 0.005
    emotion_weight: float = 0.01
    epochs: int = 20
    seed: int = 0
    init_scale: float = 0.1
    # lowest rating / max rating on a 1-5 scale; the model-side ES never
    # sees a cosine below what a 1-star prediction would give
    cosine_floor: float = 0.2
    norm_floor: float = 1e-12

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not self.emotion_weight >= 0:
            raise ConfigError(f"emotion_weight must be >= 0, got {self.emotion_weight}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not (self.init_scale > 0 and self.cosine_floor > 0 and self.norm_floor > 0):
            raise ConfigError("init_scale and floors must be > 0")

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class FactorModel:
    U: np.ndarray
    V: np.ndarray
    max_rating: float
    config: TrainConfig
    history: list = field(default_factory=list)

    @property
    def dim(self):
        return self.U.shape[1]

    @property
    def n_users(self):
        return self.U.shape[0]

    @property
    def n_items(self):
        return self.V.shape[0]

    def cosine(self, i, j):
        u, v = self.U[i], self.V[j]
        floor = self.config.norm_floor
        t2 = max(np.linalg.norm(u), floor) * max(np.linalg.norm(v), floor)
        return float(np.clip(np.dot(u, v) / t2, -1.0, 1.0))

    def predict(self, i, j):
        return float(np.clip(self.cosine(i, j) * self.max_rating, 1.0, self.max_rating))

    def cosine_users(self, users):
        """Cosines of the given users against every item, shape (len(users), M)."""
        floor = self.config.norm_floor
        U = self.U[np.asarray(users)]
        un = np.maximum(np.linalg.norm(U, axis=1), floor)
        vn = np.maximum(np.linalg.norm(self.V, axis=1), floor)
        return np.clip((U @ self.V.T) / un[:, None] / vn[None, :], -1.0, 1.0)

    def predict_users(self, users):
        return np.clip(self.cosine_users(users) * self.max_rating, 1.0, self.max_rating)

    def predict_pairs(self, users, items):
        floor = self.config.norm_floor
        U, V = self.U[users], self.V[items]
        t2 = (np.maximum(np.linalg.norm(U, axis=1), floor)
              * np.maximum(np.linalg.norm(V, axis=1), floor))
        cos = np.clip(np.einsum("ij,ij->i", U, V) / t2, -1.0, 1.0)
        return np.clip(cos * self.max_rating, 1.0, self.max_rating)


def init_model(n_users, n_items, config, max_rating=5.0):
    """Entries uniform on (0, init_scale], so every dot product starts positive."""
    if n_users < 1 or n_items < 1:
        raise ValidationError("need at least one user and one item")
    rng = rng_for(config.seed, "init")
    U = config.init_scale * (1.0 - rng.random((n_users, config.dim)))
    V = config.init_scale * (1.0 - rng.random((n_items, config.dim)))
    return FactorModel(U, V, float(max_rating), config)


@njit(cache=True)
def _step_gradients(u, v, target, popular, B, cos_floor, norm_floor, gu, gv):
    """Write dL/du and dL/dv for one (i, j) term into ``gu`` and ``gv``."""
    d = u.shape[0]
    t0 = 0.0
    t1 = 0.0
    t3 = 0.0
    for k in range(d):
        t0 += u[k] * u[k]
        t1 += v[k] * v[k]
        t3 += u[k] * v[k]
    t0 = max(np.sqrt(t0), norm_floor)
    t1 = max(np.sqrt(t1), norm_floor)
    t2 = t0 * t1
    residual = target - t3 / t2
    cu = t3 / (t0 * t0 * t0 * t1)
    cv = t3 / (t0 * t1 * t1 * t1)
    for k in range(d):
        # d(cosine)/du and d(cosine)/dv
        gu[k] = -2.0 * residual * (v[k] / t2 - cu * u[k])
        gv[k] = -2.0 * residual * (u[k] / t2 - cv * v[k])
    if B == 0.0:
        return
    if popular:
        t3s = max(abs(t3), cos_floor * t2)
        if t3 < 0.0:
            t3s = -t3s
        for k in range(d):
            gu[k] -= B * (t1 * u[k] / (t0 * t3s) - t2 * v[k] / (t3s * t3s))
            gv[k] -= B * (t0 * v[k] / (t1 * t3s) - t2 * u[k] / (t3s * t3s))
    else:
        for k in range(d):
            gu[k] -= B * (v[k] / t2 - cu * u[k])
            gv[k] -= B * (u[k] / t2 - cv * v[k])


@njit(cache=True)
def _sgd_epoch(U, V, users, items, targets, popular, B, order, lr,
               cos_floor, norm_floor, jitter, jitter_pos):
    """One pass over ``order``; returns (failed_step or -1, jitter_pos)."""
    d = U.shape[1]
    gu = np.empty(d)
    gv = np.empty(d)
    for s in range(order.shape[0]):
        t = order[s]
        i = users[t]
        j = items[t]
        # a vanishing vector has no direction; restart it from the jitter pool,
        # both before its gradient is formed and after the update
        if np.sqrt(np.dot(U[i], U[i])) < norm_floor:
            U[i, :] = jitter[jitter_pos % jitter.shape[0]]
            jitter_pos += 1
        if np.sqrt(np.dot(V[j], V[j])) < norm_floor:
            V[j, :] = jitter[jitter_pos % jitter.shape[0]]
            jitter_pos += 1
        _step_gradients(U[i], V[j], targets[t], popular[t], B[t],
                        cos_floor, norm_floor, gu, gv)
        ok = True
        for k in range(d):
            U[i, k] -= lr * gu[k]
            V[j, k] -= lr * gv[k]
            ok = ok and np.isfinite(U[i, k]) and np.isfinite(V[j, k])
        if not ok:
            return s, jitter_pos
        if np.sqrt(np.dot(U[i], U[i])) < norm_floor:
            U[i, :] = jitter[jitter_pos % jitter.shape[0]]
            jitter_pos += 1
        if np.sqrt(np.dot(V[j], V[j])) < norm_floor:
            V[j, :] = jitter[jitter_pos % jitter.shape[0]]
            jitter_pos += 1
    return -1, jitter_pos


def _emotion_terms(train, stats, lam):
    """Per-triple (popular flag, B = lambda / (score * count))."""
    n = len(train)
    if lam == 0.0 or stats is None:
        return np.zeros(n, dtype=np.bool_), np.zeros(n)
    if stats.popular is None:
        raise ValidationError("EMF needs classified item statistics")
    items = train.item_idx
    if not np.all(stats.rated[items]):
        raise ValidationError("training triples reference items without statistics")
    popular = stats.popular[items].astype(np.bool_)
    B = lam / (stats.score[items] * stats.count[items])
    return popular, B


def emf_step_gradients(model, i, j, rating, stats, lam):
    """Analytic (dL/dU_i, dL/dV_j) of the single-pair EMF loss."""
    if stats is None or stats.popular is None:
        raise ValidationError("item statistics are not classified")
    if not stats.rated[j]:
        raise ValidationError(f"item {j} has no statistics")
    popular = bool(stats.popular[j])
    B = lam / (stats.score[j] * stats.count[j])
    cfg = model.config
    gu = np.empty(model.dim)
    gv = np.empty(model.dim)
    _step_gradients(model.U[i], model.V[j], rating / model.max_rating, popular, B,
                    cfg.cosine_floor, cfg.norm_floor, gu, gv)
    if not (np.all(np.isfinite(gu)) and np.all(np.isfinite(gv))):
        branch = "popular" if popular else "obscure"
        raise NumericalError(f"non-finite gradient in the {branch} branch at ({i}, {j})")
    return gu, gv


def total_loss(model, train, stats=None, lam=0.0):
    """Sum of squared cosine errors minus lambda times the model-side ES."""
    cfg = model.config
    U, V = model.U[train.user_idx], model.V[train.item_idx]
    t2 = (np.maximum(np.linalg.norm(U, axis=1), cfg.norm_floor)
          * np.maximum(np.linalg.norm(V, axis=1), cfg.norm_floor))
    t3 = np.einsum("ij,ij->i", U, V)
    loss = float(np.sum((train.ratings / model.max_rating - t3 / t2) ** 2))
    popular, B = _emotion_terms(train, stats, lam)
    if lam == 0.0 or stats is None:
        return loss
    t3s = np.copysign(np.maximum(np.abs(t3), cfg.cosine_floor * t2), t3)
    es_term = np.where(popular, t2 / t3s, t3 / t2)
    return loss - float(np.sum(B * es_term))


def _train(train, stats, config, lam):
    if len(train) == 0:
        raise ValidationError("cannot train on an empty dataset")
    model = init_model(train.n_users, train.n_items, config, train.max_rating)
    popular, B = _emotion_terms(train, stats, lam)
    targets = train.ratings / train.max_rating
    users = np.ascontiguousarray(train.user_idx)
    items = np.ascontiguousarray(train.item_idx)
    shuffle_rng = rng_for(config.seed, "shuffle")
    jitter = (config.init_scale / 100.0) * (
        1.0 - rng_for(config.seed, "jitter").random((_JITTER_POOL, config.dim)))
    jitter_pos = 0
    start_loss = total_loss(model, train, stats, lam)
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(train))
        failed, jitter_pos = _sgd_epoch(
            model.U, model.V, users, items, targets, popular, B, order,
            config.learning_rate, config.cosine_floor, config.norm_floor,
            jitter, jitter_pos)
        if failed >= 0:
            raise NumericalError(
                f"training diverged: non-finite factors at epoch {epoch + 1}, step {failed + 1}")
        loss = total_loss(model, train, stats, lam)
        # the cosine model is scale invariant, so an oversized step inflates
        # the factors instead of overflowing; a loss above the starting
        # point is the usable divergence signal
        if not np.isfinite(loss) or loss > start_loss:
            raise NumericalError(
                f"training diverged: loss {loss:.6g} at epoch {epoch + 1} exceeds "
                f"the initial loss {start_loss:.6g}")
        model.history.append(loss)
        logger.debug("epoch %d loss %.6f", epoch + 1, loss)
    return model


def train_mf(train, config):
    """Classic cosine MF: the emotion weight is forced to zero."""
    config = replace(config, emotion_weight=0.0)
    return _train(train, None, config, 0.0)


def train_emf(train, stats, config):
    return _train(train, stats, config, config.emotion_weight)


def _splitmix64(x):
    x = x + np.uint64(0x9E3779B97F4A7C15)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


class RandomBaseline:
    """Uniform ratings in [1, max_rating], a pure function of (seed, i, j)."""

    def __init__(self, seed, max_rating=5.0, n_items=None):
        self.seed = int(seed)
        self.max_rating = float(max_rating)
        self.n_items = n_items

    def _uniform(self, users, items):
        with np.errstate(over="ignore"):
            base = _splitmix64(np.array([self.seed], dtype=np.uint64))
            h = _splitmix64(base ^ np.asarray(users, dtype=np.uint64))
            h = _splitmix64(h ^ np.asarray(items, dtype=np.uint64))
        return (h >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def predict(self, i, j):
        return float(self.predict_pairs(np.array([i]), np.array([j]))[0])

    def predict_pairs(self, users, items):
        return 1.0 + (self.max_rating - 1.0) * self._uniform(users, items)

    def predict_users(self, users):
        users = np.asarray(users, dtype=np.uint64)
        items = np.arange(self.n_items, dtype=np.uint64)
        return self.predict_pairs(users[:, None], items[None, :])


def random_baseline(seed, max_rating=5.0, n_items=None):
    return RandomBaseline(seed, max_rating, n_items)


def save_model(model, path):
    """Write the model in the ``EMFMODEL`` binary format.

    Layout: 8-byte magic, little-endian uint32 header length, UTF-8 JSON
    header (sorted keys), then float64 little-endian ``U`` row-major
    followed by ``V`` row-major.
    """
    header = json.dumps({
        "format_version": MODEL_FORMAT_VERSION,
        "dim": model.dim,
        "n_users": model.n_users,
        "n_items": model.n_items,
        "max_rating": model.max_rating,
        "config": model.config.to_dict(),
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(np.ascontiguousarray(model.U, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.V, dtype="<f8").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MODEL_MAGIC:
        raise ValidationError(f"{path} is not an EMFMODEL file")
    (hlen,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12:12 + hlen])
    if header["format_version"] != MODEL_FORMAT_VERSION:
        raise ValidationError(f"unsupported model format {header['format_version']}")
    n, m, d = header["n_users"], header["n_items"], header["dim"]
    body = np.frombuffer(blob, dtype="<f8", offset=12 + hlen)
    if body.size != (n + m) * d:
        raise ValidationError("model file is truncated")
    U = body[:n * d].reshape(n, d).astype(np.float64)
    V = body[n * d:].reshape(m, d).astype(np.float64)
    return FactorModel(U, V, header["max_rating"], TrainConfig(**header["config"]))
