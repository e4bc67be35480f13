"""Scikit-learn estimator facade over the functional training core.

Lets the classifier participate in sklearn pipelines, grid search, and
cross-validation while the experiment engine keeps using the functional API
(parameters in, parameters out).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from ..validation import check_feature_array, check_labels
from .network import predict_classes, predict_proba
from .params import Architecture, init_params
from .training import TrainConfig, train_arrays


class EmotionNetClassifier(ClassifierMixin, BaseEstimator):
    """LSTM stack + dense stack + softmax, trained with Adam on cross-entropy.

    Accepts X of shape (n, d) for pooled feature vectors or (n, T, d) for
    frame sequences. Labels are the four emotion class codes 0..3.
    """

    def __init__(
        self,
        lstm_units=(64, 64),
        dense_units=(25, 20, 15, 10),
        learning_rate=1e-3,
        batch_size=32,
        epochs=60,
        l2_lambda=1e-4,
        dropout_rate=0.2,
        seed=0,
    ):
        self.lstm_units = lstm_units
        self.dense_units = dense_units
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.l2_lambda = l2_lambda
        self.dropout_rate = dropout_rate
        self.seed = seed

    def fit(self, X, y):
        X = check_feature_array(X)
        y = check_labels(y)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have inconsistent lengths")
        arch = Architecture(
            input_dim=X.shape[2],
            lstm_units=tuple(self.lstm_units),
            dense_units=tuple(self.dense_units),
        )
        cfg = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            l2_lambda=self.l2_lambda,
            dropout_rate=self.dropout_rate,
            seed=self.seed,
        )
        lengths = np.full(X.shape[0], X.shape[1], dtype=np.int64)
        params = init_params(arch, self.seed)
        self.params_, self.train_log_, _ = train_arrays(params, X, lengths, y, cfg)
        self.classes_ = np.arange(arch.num_classes)
        self.n_features_in_ = X.shape[2]
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("this EmotionNetClassifier instance is not fitted yet")

    def predict_proba(self, X):
        self._check_fitted()
        return predict_proba(self.params_, check_feature_array(X))

    def predict(self, X):
        self._check_fitted()
        return predict_classes(self.params_, check_feature_array(X))
