"""Input validation shared by the estimators and the CLI."""
from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array

from .core import KernelSet, LayerShape
from .exceptions import ShapeMismatch


def check_subvectors(X, *, n_features=None, min_samples=1, owner="estimator") -> np.ndarray:
    """Validate a ``(n_subvectors, N')`` sample matrix; returns float64."""
    X = check_array(X, dtype=np.float64, ensure_min_samples=min_samples)
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, but {owner} is expecting {n_features} features as input")
    return X


def check_kernels(X, input_side=None) -> KernelSet:
    """Coerce a KernelSet or an ``(M, N, p, p)`` array into a KernelSet.

    ``input_side`` supplies ``m`` for raw arrays (defaults to ``p``).
    """
    if isinstance(X, KernelSet):
        return X
    arr = check_array(X, dtype=np.float64, allow_nd=True, ensure_2d=False)
    if arr.ndim != 4 or arr.shape[2] != arr.shape[3]:
        raise ShapeMismatch(f"kernels must have shape (M, N, p, p), got {arr.shape}")
    M, N, p, _ = arr.shape
    shape = LayerShape(M, N, p, input_side if input_side is not None else p)
    return KernelSet(shape, arr)


def check_count(value, name, *, minimum=1, maximum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if value < minimum or (maximum is not None and value > maximum):
        upper = "" if maximum is None else f", <= {maximum}"
        raise ValueError(f"{name} must be >= {minimum}{upper}, got {value}")
    return value


def check_cluster_count(value, name, n_samples) -> int:
    """Cluster count in ``[1, n_samples]``."""
    value = check_count(value, name)
    if value > n_samples:
        raise ValueError(f"n_samples={n_samples} should be >= {name}={value}")
    return value


def seed_from(random_state) -> int:
    """Integer seed for the solvers from an sklearn-style ``random_state``."""
    if isinstance(random_state, numbers.Integral) and not isinstance(random_state, bool):
        return int(random_state)
    return int(check_random_state(random_state).randint(np.iinfo(np.int32).max))
