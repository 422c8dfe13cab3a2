import numpy as np
import pytest

from oareorder.digital_twin import (Dataset, MlpModel, TrainConfig, denormalize, grad_check, init_model,
                                    loss_and_grads, normalize, predict, sample_configs, sample_vectors, train)
from oareorder.link_model import LinkSpec, OAConfig, is_quantized


class TestSampling:
    def test_thousand_on_grid(self, link):
        cfgs = sample_configs(link, 1000, np.random.default_rng(0))
        assert len(cfgs) == 1000
        for c in cfgs[:200]:
            c.check(link)
        vals = np.array([c.vector() for c in cfgs])
        assert all(is_quantized(v) for v in vals.ravel())

    def test_degenerate_bounds(self):
        link = LinkSpec(gain_bounds_db=(16.2, 16.2), tilt_bounds_db=(0.0, 0.0))
        vecs = sample_vectors(link, 50, np.random.default_rng(1))
        assert np.all(vecs[:, :7] == 16.2) and np.all(vecs[:, 7:] == 0.0)

    def test_seeded(self, link):
        a = sample_configs(link, 20, np.random.default_rng(9))
        b = sample_configs(link, 20, np.random.default_rng(9))
        assert a == b

    def test_rejects_empty(self, link):
        with pytest.raises(ValueError):
            sample_vectors(link, 0, np.random.default_rng(0))


class TestNormalize:
    bounds = np.array([[13.0, 19.0], [-1.0, 1.0]])

    def test_endpoints(self):
        assert np.allclose(normalize([13.0, -1.0], self.bounds), [0.0, 0.0])
        assert np.allclose(normalize([19.0, 1.0], self.bounds), [1.0, 1.0])

    def test_hand_value(self):
        assert normalize([16.0, 0.0], self.bounds)[0] == pytest.approx(0.5)

    def test_round_trip(self, link):
        vecs = sample_vectors(link, 100, np.random.default_rng(2))
        b = link.bounds_matrix()
        assert np.max(np.abs(denormalize(normalize(vecs, b), b) - vecs)) < 1e-12

    def test_zero_width(self):
        assert normalize([4.0], np.array([[4.0, 4.0]]))[0] == 0.5

    def test_layout(self, link):
        cfg = OAConfig(tuple([14.5] * 7), tuple([1.0] * 7))
        assert np.allclose(normalize(cfg, link.bounds_matrix()), [0.0] * 7 + [1.0] * 7)


def toy_dataset(targets_fn, n=200, n_out=2, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (n, 4))
    y = targets_fn(x)
    return Dataset(x, y.reshape(n, n_out), list(range(n_out)), np.tile([0.0, 1.0], (4, 1)), n_train=int(0.7 * n))


class TestTraining:
    def test_constant_target(self):
        ds = toy_dataset(lambda x: np.full((x.shape[0], 2), 1.5), n=1000)
        _, rep = train(ds, TrainConfig(hidden=8, seed=0))
        assert rep.val_rmse_db < 1e-3

    def test_seeded(self):
        ds = toy_dataset(lambda x: np.c_[x.sum(1), x[:, 0] * x[:, 1]])
        a, _ = train(ds, TrainConfig(hidden=8, max_epochs=20, seed=4))
        b, _ = train(ds, TrainConfig(hidden=8, max_epochs=20, seed=4))
        for k in MlpModel.PARAMS:
            assert np.array_equal(getattr(a, k), getattr(b, k))

    def test_returns_best_validation_model(self):
        ds = toy_dataset(lambda x: np.c_[np.sin(3 * x[:, 0]), x[:, 2] ** 2])
        model, rep = train(ds, TrainConfig(hidden=8, max_epochs=60, patience=5, seed=0))
        xv, yv = ds.validation
        assert rep.val_mse == pytest.approx(np.mean((model.forward(xv) - yv) ** 2))
        assert rep.best_epoch <= rep.epochs_run
        assert rep.val_rmse_db == pytest.approx(np.sqrt(rep.val_mse))

    def test_non_finite_loss_aborts(self):
        ds = toy_dataset(lambda x: np.c_[x[:, 0], np.full(x.shape[0], np.nan)])
        with pytest.raises(FloatingPointError, match="epoch"):
            train(ds, TrainConfig(hidden=4, max_epochs=3))

    def test_memorizes_tiny_dataset(self, link):
        rng = np.random.default_rng(7)
        x = normalize(sample_vectors(link, 10, rng), link.bounds_matrix())
        y = rng.uniform(14.0, 17.0, (10, 6))
        # validation rows repeat the training rows so the best-validation
        # model is also the best-memorizing one
        ds = Dataset(np.r_[x, x], np.r_[y, y], list(range(6)), link.bounds_matrix(), n_train=10)
        model, _ = train(ds, TrainConfig(learning_rate=1e-2, batch_size=10, max_epochs=4000, patience=4000, seed=0))
        for xi, yi in zip(x, y):
            cfg = OAConfig.from_vector(denormalize(xi, link.bounds_matrix()))
            assert np.max(np.abs(predict(model, cfg).q_db - yi)) < 0.05

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(patience=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=-1)


class TestPredict:
    def test_zero_weights(self, link):
        rng = np.random.default_rng(0)
        m = init_model(14, 8, 6, link.bounds_matrix(), range(6), rng)
        for k in ("w1", "b1", "w2"):
            getattr(m, k)[...] = 0.0
        m.b2[...] = 12.5
        q = predict(m, OAConfig.uniform(7, 15.0))
        assert np.all(q.q_db == 12.5)

    def test_batch_equals_single(self, link, quick_model):
        vecs = sample_vectors(link, 9, np.random.default_rng(3))
        batch = quick_model.q_many(vecs)
        for v, row in zip(vecs, batch):
            assert np.array_equal(predict(quick_model, OAConfig.from_vector(v)).q_db, row)

    def test_unmodelled_batches_nan(self, link):
        m = init_model(14, 4, 2, link.bounds_matrix(), [1, 4], np.random.default_rng(0))
        q = m(OAConfig.uniform(7, 16.0))
        assert set(q.loaded()) == {1, 4}

    def test_save_load(self, tmp_path, quick_model):
        quick_model.save(tmp_path / "m.json")
        back = MlpModel.load(tmp_path / "m.json")
        for k in MlpModel.PARAMS:
            assert np.array_equal(getattr(back, k), getattr(quick_model, k))
        assert np.array_equal(back.bounds, quick_model.bounds)
        assert back.batches == quick_model.batches


class TestGradients:
    def test_random_tanh_model(self, link):
        rng = np.random.default_rng(11)
        m = init_model(14, 8, 6, link.bounds_matrix(), range(6), rng)
        m.b1[...] = rng.normal(0, 0.1, 8)
        x = rng.uniform(0, 1, (5, 14))
        y = rng.normal(15, 1, (5, 6))
        assert grad_check(m, x, y) < 1e-4

    def test_linear_model(self, link):
        rng = np.random.default_rng(12)
        m = init_model(14, 8, 6, link.bounds_matrix(), range(6), rng, activation="linear")
        x = rng.uniform(0, 1, (5, 14))
        y = rng.normal(0, 1, (5, 6))
        assert grad_check(m, x, y) < 1e-6

    def test_zero_weights_bias_gradient(self, link):
        rng = np.random.default_rng(13)
        m = init_model(14, 4, 3, link.bounds_matrix(), range(3), rng)
        for k in MlpModel.PARAMS:
            getattr(m, k)[...] = 0.0
        x = rng.uniform(0, 1, (8, 14))
        y = rng.normal(15, 1, (8, 3))
        _, g = loss_and_grads(m, x, y)
        # prediction is 0 everywhere, so the residual is -y
        assert np.allclose(g["b2"], 2 * np.mean(-y, axis=0))
        assert grad_check(m, x, y) < 1e-6


def test_dataset_csv_round_trip(tmp_path, link):
    ds = toy_dataset(lambda x: np.c_[x[:, 0], x[:, 1]], n=20)
    ds.to_csv(tmp_path / "d.csv")
    back = Dataset.from_csv(tmp_path / "d.csv", ds.bounds, n_train=ds.n_train)
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.targets, ds.targets)
    assert back.batches == ds.batches
