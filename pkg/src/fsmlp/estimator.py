"""scikit-learn compatible wrapper around FSMLP training and prediction."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.metrics import r2_score
from sklearn.utils.validation import check_is_fitted

from .model import FSMLP, ModelConfig
from .training import TrainConfig, fit_model


def check_windows(X, y=None, n_channels: int | None = None, lookback: int | None = None,
                  horizon: int | None = None):
    """Validate window stacks: X (n, channels, lookback), y (n, channels, horizon).

    Returns float64 copies; raises ValueError on bad rank, size or non-finite values.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"X must be 3-d (n_windows, n_channels, lookback), got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("X contains no windows")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains NaN or infinite values")
    if n_channels is not None and X.shape[1] != n_channels:
        raise ValueError(f"X has {X.shape[1]} channels, expected {n_channels}")
    if lookback is not None and X.shape[2] != lookback:
        raise ValueError(f"X has lookback {X.shape[2]}, expected {lookback}")
    if y is None:
        return X
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 3:
        raise ValueError(f"y must be 3-d (n_windows, n_channels, horizon), got shape {y.shape}")
    if y.shape[:2] != X.shape[:2]:
        raise ValueError(f"X {X.shape} and y {y.shape} disagree on windows/channels")
    if horizon is not None and y.shape[2] != horizon:
        raise ValueError(f"y has horizon {y.shape[2]}, expected {horizon}")
    if not np.all(np.isfinite(y)):
        raise ValueError("y contains NaN or infinite values")
    return X, y


class FSMLPForecaster(RegressorMixin, BaseEstimator):
    """Multi-channel forecaster over pre-windowed data.

    ``fit(X, y)`` takes X of shape (n, channels, lookback) and y of shape
    (n, channels, horizon). Early stopping uses ``eval_set`` when given,
    otherwise the last ``validation_fraction`` of windows (chronological).

    Examples
    --------
    >>> est = FSMLPForecaster(hidden_dim=16, n_blocks=1, epochs=2)  # doctest: +SKIP
    >>> est.fit(X, y).predict(X).shape                              # doctest: +SKIP
    """

    def __init__(self, n_blocks=3, hidden_dim=128, transform="log", activation="gelu",
                 simplex_axis="input", no_embedding=False, revin_affine=False,
                 constraint="simplex", penalty_lambda=1e-4, epochs=100, patience=10,
                 batch_size=256, learning_rate=0.01, loss_mode="dual",
                 validation_fraction=0.2, random_state=0):
        self.n_blocks = n_blocks
        self.hidden_dim = hidden_dim
        self.transform = transform
        self.activation = activation
        self.simplex_axis = simplex_axis
        self.no_embedding = no_embedding
        self.revin_affine = revin_affine
        self.constraint = constraint
        self.penalty_lambda = penalty_lambda
        self.epochs = epochs
        self.patience = patience
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.loss_mode = loss_mode
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _configs(self, n_channels, lookback, horizon):
        seed = 0 if self.random_state is None else int(self.random_state)
        mcfg = ModelConfig(
            lookback=lookback, horizon=horizon, channels=n_channels, n_blocks=self.n_blocks,
            hidden_dim=self.hidden_dim, transform=self.transform, activation=self.activation,
            simplex_axis=self.simplex_axis, no_embedding=self.no_embedding,
            revin_affine=self.revin_affine, constraint=self.constraint,
            penalty_lambda=self.penalty_lambda, seed=seed)
        tcfg = TrainConfig(
            epochs=self.epochs, patience=min(self.patience, self.epochs),
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            loss_mode=self.loss_mode, seed=seed)
        return mcfg, tcfg

    def fit(self, X, y, eval_set=None):
        X, y = check_windows(X, y)
        if eval_set is not None:
            X_val, y_val = check_windows(*eval_set, n_channels=X.shape[1],
                                         lookback=X.shape[2], horizon=y.shape[2])
            X_tr, y_tr = X, y
        else:
            if not 0 < self.validation_fraction < 1:
                raise ValueError("validation_fraction must be in (0, 1) without an eval_set")
            n_val = max(1, int(round(len(X) * self.validation_fraction)))
            if n_val >= len(X):
                raise ValueError("not enough windows to hold out a validation set")
            X_tr, y_tr, X_val, y_val = X[:-n_val], y[:-n_val], X[-n_val:], y[-n_val:]

        mcfg, tcfg = self._configs(X.shape[1], X.shape[2], y.shape[2])
        self.model_ = FSMLP(mcfg)
        self.report_ = fit_model(self.model_, (X_tr, y_tr), (X_val, y_val), tcfg)
        self.n_channels_ = X.shape[1]
        self.lookback_ = X.shape[2]
        self.horizon_ = y.shape[2]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_windows(X, n_channels=self.n_channels_, lookback=self.lookback_)
        return self.model_.predict(X)

    def score(self, X, y, sample_weight=None):
        """R^2 over flattened (channel, horizon) outputs."""
        X, y = check_windows(X, y)
        pred = self.predict(X)
        n = len(y)
        return r2_score(y.reshape(n, -1), pred.reshape(n, -1), sample_weight=sample_weight)
