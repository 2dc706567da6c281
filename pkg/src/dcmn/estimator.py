"""scikit-learn style estimator wrapping the localiser, so the model composes
with pipelines, cross-validation utilities, and cloning.

X is a 3-D array of already-windowed readings, (n_windows, T, n_features),
with the first ``n_rssi`` feature columns the RSSI block and the rest the
accelerometer block; y is (n_windows, T) integer room labels.
"""

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin

from . import data, train
from .errors import DimensionError


def check_window_array(X, T=None, name="X"):
    """Validate a (n_windows, T, n_features) float array; returns float64 copy."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise DimensionError(f"{name}: expected 3-D (windows, T, features), got {X.shape}")
    if T is not None and X.shape[1] != T:
        raise DimensionError(f"{name}: expected window length {T}, got {X.shape[1]}")
    if X.shape[0] == 0 or X.shape[2] == 0:
        raise DimensionError(f"{name}: empty array")
    if not np.isfinite(X).all():
        raise DimensionError(f"{name}: contains non-finite values")
    return X


def check_label_array(y, n_windows, T, name="y"):
    """Validate (n_windows, T) integer labels; returns int64 copy."""
    y = np.asarray(y)
    if y.shape != (n_windows, T):
        raise DimensionError(f"{name}: expected shape {(n_windows, T)}, got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise DimensionError(f"{name}: labels must be integers")
    return y.astype(np.int64)


class DCMNLocalizer(BaseEstimator, ClassifierMixin):
    """Room-level sequence classifier over dual-modality windows.

    Parameters mirror the training configuration; ``n_rssi`` splits the
    feature axis into the RSSI and accelerometer blocks. With
    ``normalize=True`` (default) per-feature min-max statistics are fit on
    the training windows and applied again at prediction time.
    """

    def __init__(
        self,
        d=128,
        heads=4,
        n_rssi=data.N_RSSI,
        epochs=200,
        learning_rate=0.0001,
        dropout=0.15,
        tau=1.0,
        batch_size=64,
        patience=20,
        val_fraction=0.1,
        ablation="full",
        normalize=True,
        seed=0,
    ):
        self.d = d
        self.heads = heads
        self.n_rssi = n_rssi
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.dropout = dropout
        self.tau = tau
        self.batch_size = batch_size
        self.patience = patience
        self.val_fraction = val_fraction
        self.ablation = ablation
        self.normalize = normalize
        self.seed = seed

    def _split_modalities(self, X):
        if X.shape[2] > self.n_rssi:
            return X[:, :, : self.n_rssi], X[:, :, self.n_rssi :]
        if X.shape[2] == self.n_rssi and self.ablation == "no-accel":
            # accelerometer block absent; feed a zero placeholder channel
            return X, np.zeros((X.shape[0], X.shape[1], 1))
        raise DimensionError(
            f"X has {X.shape[2]} features but n_rssi={self.n_rssi}; expected "
            f"an accelerometer block after the RSSI columns"
        )

    def _apply_norm(self, X):
        span = self.feature_max_ - self.feature_min_
        safe = np.where(span > 0, span, 1.0)
        scaled = np.clip((X - self.feature_min_) / safe, 0.0, 1.0)
        return np.where(span > 0, scaled, 0.0)

    def fit(self, X, y):
        X = check_window_array(X)
        y = check_label_array(y, X.shape[0], X.shape[1])
        self.window_ = X.shape[1]
        self.classes_ = np.unique(y)
        encoded = np.searchsorted(self.classes_, y)
        if self.normalize:
            flat = X.reshape(-1, X.shape[2])
            self.feature_min_ = flat.min(axis=0)
            self.feature_max_ = flat.max(axis=0)
            X = self._apply_norm(X)
        rssi, accel = self._split_modalities(X)
        samples = [
            data.Sample(rssi=rssi[i], accel=accel[i], labels=encoded[i], subject_id="train")
            for i in range(X.shape[0])
        ]
        vocab = data.RoomVocabulary(tuple(f"room_{c}" for c in self.classes_))
        cfg = train.TrainConfig(
            d=self.d,
            heads=self.heads,
            T=self.window_,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            dropout=self.dropout,
            tau=self.tau,
            batch_size=self.batch_size,
            seed=self.seed,
            patience=self.patience,
            ablation=self.ablation,
            val_fraction=self.val_fraction,
        )
        result = train.train(samples, cfg, vocab)
        self.model_ = result.model
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise RuntimeError("fit the estimator before predicting")
        X = check_window_array(X, T=self.window_)
        if self.normalize:
            X = self._apply_norm(X)
        rssi, accel = self._split_modalities(X)
        dtype = next(self.model_.parameters()).dtype
        pred = train.predict(
            self.model_,
            torch.as_tensor(rssi, dtype=dtype),
            torch.as_tensor(accel, dtype=dtype),
        )
        return self.classes_[pred]

    def score(self, X, y):
        """Fraction of correctly labeled timesteps."""
        y = np.asarray(y)
        return float((self.predict(X) == y).mean())
