"""sklearn-style estimator surface: params, validation, fit/predict/score."""

import numpy as np
import pytest
from sklearn.base import clone

from dcmn import DCMNLocalizer
from dcmn.errors import DimensionError
from dcmn.estimator import check_label_array, check_window_array


def make_dataset(n=60, T=4, n_rssi=5, n_accel=3, n_rooms=3, seed=0, label_offset=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 0.2, size=(n, T, n_rssi + n_accel))
    y = rng.integers(0, n_rooms, size=(n, T))
    for i in range(n):
        for t in range(T):
            X[i, t, y[i, t]] += 0.8
    return X, y + label_offset


FAST = dict(d=8, heads=2, n_rssi=5, epochs=40, learning_rate=0.01, dropout=0.0,
            batch_size=16, patience=40, val_fraction=0.0, seed=0)


class TestValidation:
    def test_window_array_checks(self):
        check_window_array(np.zeros((2, 3, 4)))
        with pytest.raises(DimensionError):
            check_window_array(np.zeros((2, 3)))
        with pytest.raises(DimensionError):
            check_window_array(np.zeros((2, 3, 4)), T=5)
        with pytest.raises(DimensionError):
            check_window_array(np.full((1, 2, 2), np.nan))

    def test_label_array_checks(self):
        out = check_label_array(np.zeros((2, 3)), 2, 3)
        assert out.dtype == np.int64
        with pytest.raises(DimensionError):
            check_label_array(np.zeros((2, 4)), 2, 3)
        with pytest.raises(DimensionError):
            check_label_array(np.full((2, 3), 0.5), 2, 3)


class TestEstimatorApi:
    def test_get_set_params_and_clone(self):
        est = DCMNLocalizer(d=16, heads=4, dropout=0.2)
        params = est.get_params()
        assert params["d"] == 16 and params["dropout"] == 0.2
        est2 = clone(est)
        assert est2.get_params() == params
        est.set_params(d=32)
        assert est.get_params()["d"] == 32

    def test_fit_predict_score(self):
        X, y = make_dataset()
        est = DCMNLocalizer(**FAST).fit(X, y)
        pred = est.predict(X)
        assert pred.shape == y.shape
        assert est.score(X, y) >= 0.95
        np.testing.assert_array_equal(est.classes_, [0, 1, 2])

    def test_non_dense_labels_round_trip(self):
        X, y = make_dataset(label_offset=5)  # labels 5..7
        est = DCMNLocalizer(**FAST).fit(X, y)
        pred = est.predict(X)
        assert set(np.unique(pred)) <= {5, 6, 7}
        assert est.score(X, y) >= 0.95

    def test_predict_before_fit_raises(self):
        with pytest.raises(RuntimeError):
            DCMNLocalizer().predict(np.zeros((1, 10, 26)))

    def test_same_seed_reproducible(self):
        X, y = make_dataset(n=30)
        cfg = dict(FAST, epochs=5)
        a = DCMNLocalizer(**cfg).fit(X, y).predict(X)
        b = DCMNLocalizer(**cfg).fit(X, y).predict(X)
        np.testing.assert_array_equal(a, b)

    def test_normalization_stats_learned_from_train(self):
        X, y = make_dataset(n=30)
        est = DCMNLocalizer(**dict(FAST, epochs=2)).fit(X * 100.0, y)
        assert est.feature_max_.max() > 1.0
        est.predict(X * 100.0)  # scaled consistently, no error

    def test_window_length_mismatch_on_predict(self):
        X, y = make_dataset(n=20, T=4)
        est = DCMNLocalizer(**dict(FAST, epochs=2)).fit(X, y)
        with pytest.raises(DimensionError):
            est.predict(np.zeros((2, 6, 8)))
