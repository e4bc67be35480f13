"""Input validation helpers used across modules and the estimator facade."""

from __future__ import annotations

import numpy as np


def check_finite(values: np.ndarray, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} contains non-finite values")
    return values


def check_feature_array(X, *, name: str = "X") -> np.ndarray:
    """Coerce to a float64 batch of sequences, shape (n, T, d).

    Accepts (n, d) pooled vectors (promoted to T=1) or (n, T, d) sequences.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[:, None, :]
    if X.ndim != 3:
        raise ValueError(f"{name} must be 2-D (n, d) or 3-D (n, T, d), got shape {X.shape}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if X.shape[1] < 1:
        raise ValueError(f"{name} must have at least one time step")
    return check_finite(X, name)


def check_labels(y, *, num_classes: int = 4, name: str = "y") -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {y.shape}")
    if y.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.issubdtype(y.dtype, np.integer):
        y_int = y.astype(np.int64)
        if not np.array_equal(y_int, y):
            raise ValueError(f"{name} must contain integer class codes")
        y = y_int
    y = y.astype(np.int64)
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError(f"{name} must contain class codes in 0..{num_classes - 1}")
    return y


def round_half_up(x: float) -> int:
    """Rounding convention used for split and buffer sizing (0.5 rounds up)."""
    return int(np.floor(x + 0.5))
