"""Input validation helpers shared by the functional core and the estimators."""

import math
from numbers import Integral, Real

import numpy as np
from sklearn.utils import check_array

from .exceptions import ConfigError, ContractError


def check_features(X, *, d=None, name="X", allow_empty=False):
    """Return ``X`` as a finite float64 2-D array, optionally checking width."""
    try:
        X = check_array(
            X,
            dtype=np.float64,
            ensure_2d=True,
            ensure_min_samples=0 if allow_empty else 1,
            ensure_all_finite=True,
            input_name=name,
        )
    except ValueError as exc:
        raise ContractError(str(exc)) from exc
    if d is not None and X.shape[1] != d:
        raise ContractError(f"{name} has {X.shape[1]} features, expected {d}")
    return X


def check_vector(x, d, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != d:
        raise ContractError(f"{name} must be a vector of length {d}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ContractError(f"{name} contains NaN or Inf")
    return x


def check_labels(y, n_classes, n_samples=None, name="y"):
    y = np.asarray(y)
    if y.ndim != 1:
        raise ContractError(f"{name} must be one-dimensional")
    if y.size and not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ContractError(f"{name} must hold integer class indices")
    y = y.astype(np.int64)
    if n_samples is not None and y.shape[0] != n_samples:
        raise ContractError(f"{name} has {y.shape[0]} entries, expected {n_samples}")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ContractError(f"{name} holds labels outside [0, {n_classes})")
    return y


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, Integral) or value < minimum:
        raise ConfigError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_positive_real(value, name):
    if isinstance(value, bool) or not isinstance(value, Real) or not math.isfinite(value) or value <= 0:
        raise ConfigError(f"{name} must be a finite real > 0, got {value!r}")
    return float(value)


def check_sparsity(sparsity):
    if isinstance(sparsity, bool) or not isinstance(sparsity, Real) or not 0 < sparsity <= 1:
        raise ConfigError(f"sparsity must lie in (0, 1], got {sparsity!r}")
    return float(sparsity)


def check_batch_size(n, available):
    if isinstance(n, bool) or not isinstance(n, Integral) or n < 0:
        raise ContractError(f"batch size must be a non-negative integer, got {n!r}")
    if n > available:
        raise ContractError(f"batch size {n} exceeds the {available} available pool samples")
    return int(n)
