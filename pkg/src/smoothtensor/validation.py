"""Input checks shared by the estimators and the CLI."""
import numbers

import numpy as np

from .exceptions import PreconditionError
from .tensor_core import as_array

__all__ = ["check_tensor", "check_rank", "check_index_samples", "check_real_samples", "check_seed"]


def check_tensor(T, min_order=3):
    """Finite float ndarray of order at least ``min_order``."""
    arr = np.asarray(as_array(T), dtype=float)
    if arr.ndim < min_order:
        raise PreconditionError(f"expected a tensor of order >= {min_order}, got order {arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise PreconditionError("tensor has non-finite entries")
    return arr


def check_rank(R, upper=None, name="rank"):
    if not isinstance(R, numbers.Integral) or isinstance(R, bool) or R < 1:
        raise PreconditionError(f"{name} must be a positive integer, got {R!r}")
    if upper is not None and R > upper:
        raise PreconditionError(f"{name}={R} exceeds the supported maximum {upper}")
    return int(R)


def check_index_samples(X, n=None):
    """``(N, l)`` integer array with entries in ``[0, n)``; one-hot input is collapsed."""
    X = np.asarray(X)
    if X.ndim == 3:
        if not np.all((X == 0) | (X == 1)) or not np.all(X.sum(axis=2) == 1):
            raise PreconditionError("one-hot samples need exactly one 1 per view")
        n = X.shape[2] if n is None else n
        X = X.argmax(axis=2)
    if X.ndim != 2 or X.shape[0] == 0:
        raise PreconditionError("samples must be a nonempty (N, l) array")
    if not np.issubdtype(X.dtype, np.integer):
        if not np.all(np.equal(np.mod(X, 1), 0)):
            raise PreconditionError("sample indices must be integers")
        X = X.astype(np.int64)
    if n is None:
        n = int(X.max()) + 1
    if X.min() < 0 or X.max() >= n:
        raise PreconditionError(f"sample indices must lie in [0, {n})")
    return X, int(n)


def check_real_samples(X, n_features=None):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise PreconditionError("samples must be a nonempty (N, n) array")
    if not np.all(np.isfinite(X)):
        raise PreconditionError("samples contain non-finite values")
    if n_features is not None and X.shape[1] != n_features:
        raise PreconditionError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def check_seed(seed):
    """Integer seed in ``[0, 2**64)``."""
    if not isinstance(seed, numbers.Integral) or isinstance(seed, bool):
        raise PreconditionError(f"seed must be an integer, got {seed!r}")
    if not 0 <= seed < 2**64:
        raise PreconditionError("seed must lie in [0, 2**64)")
    return int(seed)
