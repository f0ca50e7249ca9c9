"""Input checks for the estimator API."""
from __future__ import annotations

import numbers

import numpy as np


def check_seeds(X) -> np.ndarray:
    """Environment seeds as a 1-D uint64 array.

    Accepts a scalar, a sequence, or an (n, 1) column. Seeds must be
    non-negative integers below 2**64.
    """
    if isinstance(X, numbers.Integral):
        X = [X]
    arr = np.asarray(X, dtype=object)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D array of seeds, got shape {arr.shape}")
    if len(arr) == 0:
        raise ValueError("expected at least one seed")
    out = np.empty(len(arr), dtype=np.uint64)
    for i, x in enumerate(arr):
        if isinstance(x, (bool, np.bool_)) or not isinstance(x, (numbers.Integral, np.integer)):
            raise TypeError(f"seed at index {i} is not an integer: {x!r}")
        if not 0 <= int(x) < 2**64:
            raise ValueError(f"seed at index {i} out of range: {x}")
        out[i] = int(x)
    return out

