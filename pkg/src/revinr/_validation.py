"""Input checks shared by the estimators."""
from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DomainError

COORD_TOL = 1e-6


def check_coordinates(X, dtype=np.float64):
    """Validate an ``(N, 3)`` batch of normalized coordinates in ``[-1, 1]``."""
    X = check_array(X, dtype=dtype, ensure_min_samples=1)
    if X.shape[1] != 3:
        raise DomainError(f"coordinates need 3 columns, got {X.shape[1]}")
    if np.abs(X).max() > 1.0 + COORD_TOL:
        raise DomainError("coordinates must lie in [-1, 1]^3")
    return X


def check_targets(y, n):
    y = check_array(y, ensure_2d=False, dtype=np.float64)
    if y.ndim != 1 or len(y) != n:
        raise DomainError(f"expected {n} scalar targets, got shape {y.shape}")
    return y
