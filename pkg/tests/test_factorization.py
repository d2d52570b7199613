import numpy as np
import pytest

from emorec.errors import ConfigError, NumericalError, ValidationError
from emorec.factorization import (FactorModel, TrainConfig, _sgd_epoch, emf_step_gradients,
                                  init_model, load_model, random_baseline, save_model, total_loss,
                                  train_emf, train_mf)
from emorec.item_stats import classify, compute_item_stats

from conftest import fd_gradient, pair_loss

FAST = TrainConfig(dim=4, epochs=5, seed=1)


@pytest.fixture
def stats(synthetic):
    return classify(compute_item_stats(synthetic))


def _model(U, V, cfg=FAST):
    return FactorModel(np.asarray(U, float), np.asarray(V, float), 5.0, cfg)


@pytest.mark.parametrize("popular", [True, False])
@pytest.mark.parametrize("lam", [0.0, 0.01, 1.0])
def test_gradients_match_finite_differences(synthetic, stats, popular, lam):
    rng = np.random.default_rng(11)
    js = np.flatnonzero(stats.rated & (stats.popular == popular))
    checked = 0
    for _ in range(25):
        model = _model(rng.normal(size=(2, 6)), rng.normal(size=(synthetic.n_items, 6)))
        j = int(rng.choice(js))
        if abs(model.cosine(0, j)) < 0.25:
            continue
        rating = float(rng.integers(1, 6))
        gu, gv = emf_step_gradients(model, 0, j, rating, stats, lam)
        B = lam / (stats.score[j] * stats.count[j])
        fu, fv = fd_gradient(model.U[0], model.V[j], rating / 5.0, popular, B, FAST.cosine_floor)
        np.testing.assert_allclose(gu, fu, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(gv, fv, rtol=1e-5, atol=1e-8)
        checked += 1
    assert checked > 10


def test_total_loss_is_sum_of_pair_losses(synthetic, stats):
    model = init_model(synthetic.n_users, synthetic.n_items, FAST)
    model.U[:] = np.random.default_rng(0).normal(size=model.U.shape)
    lam = 0.5
    expected = 0.0
    for i, j, r in zip(synthetic.user_idx, synthetic.item_idx, synthetic.ratings):
        B = lam / (stats.score[j] * stats.count[j])
        expected += pair_loss(model.U[i], model.V[j], r / 5.0, bool(stats.popular[j]), B,
                              FAST.cosine_floor)
    assert total_loss(model, synthetic, stats, lam) == pytest.approx(expected, rel=1e-10)


def test_prediction_is_clipped_cosine():
    model = _model([[1.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.1], [0.6, 0.8]])
    assert model.predict(0, 0) == 5.0
    assert model.predict(0, 1) == 1.0     # cosine 0 floors at the lowest rating
    assert model.predict(0, 2) == 1.0
    assert model.predict(0, 3) == pytest.approx(3.0)
    np.testing.assert_allclose(model.predict_users([0, 1]),
                               [[model.predict(i, j) for j in range(4)] for i in range(2)])
    np.testing.assert_allclose(model.predict_pairs(np.array([0, 1]), np.array([3, 0])), [3.0, 5.0])


def test_init_is_positive_and_seeded():
    a = init_model(5, 7, FAST)
    b = init_model(5, 7, FAST)
    assert np.all(a.U > 0) and np.all(a.V <= FAST.init_scale)
    assert np.array_equal(a.U, b.U)
    assert not np.array_equal(a.U, init_model(5, 7, TrainConfig(dim=4, seed=2)).U)


def test_training_reduces_loss(synthetic, stats):
    model = train_emf(synthetic, stats, TrainConfig(dim=4, epochs=8, seed=0))
    start = total_loss(init_model(synthetic.n_users, synthetic.n_items, model.config),
                       synthetic, stats, model.config.emotion_weight)
    assert model.history[-1] < start
    assert np.all(np.isfinite(model.U)) and np.all(np.isfinite(model.V))


def test_training_is_deterministic(synthetic, stats):
    a = train_emf(synthetic, stats, FAST)
    b = train_emf(synthetic, stats, FAST)
    assert np.array_equal(a.U, b.U) and np.array_equal(a.V, b.V)
    c = train_emf(synthetic, stats, TrainConfig(dim=4, epochs=5, seed=2))
    assert not np.array_equal(a.U, c.U)


def test_zero_lambda_is_plain_mf(synthetic, stats, tmp_path):
    from dataclasses import replace
    mf = train_mf(synthetic, FAST)
    emf = train_emf(synthetic, stats, replace(FAST, emotion_weight=0.0))
    save_model(mf, tmp_path / "mf.bin")
    save_model(emf, tmp_path / "emf.bin")
    assert (tmp_path / "mf.bin").read_bytes() == (tmp_path / "emf.bin").read_bytes()


def test_emotion_term_changes_the_model(synthetic, stats):
    from dataclasses import replace
    mf = train_mf(synthetic, FAST)
    emf = train_emf(synthetic, stats, replace(FAST, emotion_weight=0.1))
    assert not np.array_equal(mf.U, emf.U)


def test_save_load_round_trip(synthetic, stats, tmp_path):
    model = train_emf(synthetic, stats, FAST)
    path = tmp_path / "m.bin"
    save_model(model, path)
    back = load_model(path)
    assert np.array_equal(back.U, model.U) and np.array_equal(back.V, model.V)
    assert back.config == model.config and back.max_rating == model.max_rating
    blob = path.read_bytes()
    assert blob[:8] == b"EMFMODEL"
    path.write_bytes(blob[:-8])
    with pytest.raises(ValidationError, match="truncated"):
        load_model(path)
    path.write_bytes(b"NOTMODEL" + blob[8:])
    with pytest.raises(ValidationError):
        load_model(path)


def test_divergence_raises(synthetic, stats):
    with pytest.raises(NumericalError, match="diverged"):
        train_emf(synthetic, stats, TrainConfig(dim=4, epochs=3, learning_rate=10.0))


def test_step_on_unclassified_stats(synthetic):
    model = init_model(synthetic.n_users, synthetic.n_items, FAST)
    with pytest.raises(ValidationError):
        emf_step_gradients(model, 0, 0, 3.0, compute_item_stats(synthetic), 0.01)


def test_vanishing_vector_is_rejittered():
    U = np.zeros((1, 3))
    V = np.full((1, 3), 0.1)
    jitter = np.full((4, 3), 1e-3)
    failed, pos = _sgd_epoch(U, V, np.array([0]), np.array([0]), np.array([0.8]),
                             np.zeros(1, np.bool_), np.zeros(1), np.array([0]), 0.01,
                             0.2, 1e-12, jitter, 0)
    assert failed == -1 and pos == 1
    assert np.all(np.isfinite(U)) and np.all(U != 0)


@pytest.mark.parametrize("kwargs", [
    {"dim": 0}, {"learning_rate": 0.0}, {"emotion_weight": -1.0}, {"epochs": 0},
    {"cosine_floor": 0.0},
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_random_baseline_range_and_mean():
    rb = random_baseline(seed=5, max_rating=5.0, n_items=400)
    grid = rb.predict_users(np.arange(500))
    assert grid.min() >= 1.0 and grid.max() <= 5.0
    # uniform on [1, 5]: mean 3, variance 16/12
    se = np.sqrt(16 / 12 / grid.size)
    assert abs(grid.mean() - 3.0) < 5 * se
    assert rb.predict(3, 7) == grid[3, 7]
    assert np.array_equal(grid, random_baseline(5, 5.0, 400).predict_users(np.arange(500)))
    assert not np.array_equal(grid, random_baseline(6, 5.0, 400).predict_users(np.arange(500)))


def test_cosine_matches_direct_recomputation():
    rng = np.random.default_rng(4)
    model = _model(rng.normal(size=(10, 5)), rng.normal(size=(10, 5)))
    for i, j in rng.integers(0, 10, size=(100, 2)):
        u, v = model.U[i], model.V[j]
        expected = sum(a * b for a, b in zip(u, v)) / (sum(a * a for a in u) ** 0.5
                                                       * sum(b * b for b in v) ** 0.5)
        assert abs(model.cosine(i, j) - expected) <= 1e-12


def test_parallel_and_orthogonal_vectors():
    model = _model([[1.0, 2.0]], [[2.0, 4.0], [2.0, -1.0]])
    assert model.cosine(0, 0) == pytest.approx(1.0) and model.predict(0, 0) == pytest.approx(5.0)
    assert model.cosine(0, 1) == 0.0 and model.predict(0, 1) == 1.0


def test_one_dimensional_start_is_positive():
    model = init_model(1, 1, TrainConfig(dim=1, seed=7))
    assert model.U[0, 0] > 0 and model.U[0] @ model.V[0] > 0


def test_single_cell_fit():
    from emorec.ingest import from_triples
    ds = from_triples([1], [1], [5.0])
    model = train_mf(ds, TrainConfig(dim=3, epochs=50, learning_rate=0.05))
    assert abs(model.predict(0, 0) - 5.0) < 0.25


@pytest.mark.parametrize("lam", [0.0, 0.01])
def test_loss_curve_mostly_decreasing(lam):
    from emorec.datasets import synthetic_ratings
    ds = synthetic_ratings(n_users=60, n_items=40, n_ratings=1000, seed=0)
    stats = classify(compute_item_stats(ds))
    model = train_emf(ds, stats, TrainConfig(emotion_weight=lam))
    start = total_loss(init_model(ds.n_users, ds.n_items, model.config), ds, stats, lam)
    losses = [start] + model.history
    falling = sum(b <= a for a, b in zip(losses, losses[1:]))
    assert falling >= 0.8 * len(model.history)


def test_zero_residual_leaves_only_the_emotion_term(synthetic, stats):
    j = int(np.flatnonzero(stats.popular)[0])
    model = _model([[1.0, 0.5, 0.2]], np.tile([0.3, 0.9, 0.1], (synthetic.n_items, 1)))
    rating = 5.0 * model.cosine(0, j)
    lam = 0.3
    gu, gv = emf_step_gradients(model, 0, j, rating, stats, lam)
    zu, zv = emf_step_gradients(model, 0, j, rating, stats, 0.0)
    np.testing.assert_allclose(zu, 0.0, atol=1e-15)
    B = lam / (stats.score[j] * stats.count[j])
    u, v = model.U[0], model.V[j]
    t0, t1 = np.linalg.norm(u), np.linalg.norm(v)
    t3 = u @ v
    np.testing.assert_allclose(gu, -B * (t1 * u / (t0 * t3) - t0 * t1 * v / t3 ** 2), rtol=1e-12)


def test_strong_emotion_weight_lowers_popular_cosines(synthetic):
    from dataclasses import replace
    from emorec.item_stats import PopularityThresholds
    stats = classify(compute_item_stats(synthetic), PopularityThresholds(0.0, 0.0))
    assert stats.popular[stats.rated].all()
    cfg = TrainConfig(dim=4, epochs=10, seed=0)
    mean_cos = []
    for lam in (0.0, 1.0):
        model = train_emf(synthetic, stats, replace(cfg, emotion_weight=lam))
        cos = model.cosine_users(np.arange(synthetic.n_users))
        mean_cos.append(cos[synthetic.user_idx, synthetic.item_idx].mean())
    assert mean_cos[1] < mean_cos[0]
