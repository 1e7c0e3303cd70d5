"""Input validation helpers shared by the estimators."""
import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DataError


def check_categorical(X, n_categories=None, *, allow_empty_columns=True):
    """Validate a 0-based integer category matrix; return ``(Y, L)``.

    ``Y`` is a C-contiguous ``uint8`` copy. ``L`` defaults to
    ``max(Y) + 1`` but never less than 2.
    """
    try:
        arr = check_array(X, dtype=None, ensure_2d=True, ensure_min_features=0
                          if allow_empty_columns else 1)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.isfinite(arr)) or not np.all(arr == np.round(arr)):
            raise DataError("categorical matrix must hold integer codes")
    arr = np.asarray(arr)
    if arr.size and arr.min() < 0:
        raise DataError("category codes must be nonnegative (0-based)")
    top = int(arr.max()) + 1 if arr.size else 2
    L = max(top, 2) if n_categories is None else int(n_categories)
    if top > L:
        raise DataError(f"found category {top - 1} but only {L} categories declared")
    if L > 255:
        raise DataError("at most 255 categories are supported")
    return np.ascontiguousarray(arr, dtype=np.uint8), L


def check_binary(X):
    Y, L = check_categorical(X)
    if L != 2:
        raise DataError("binary model requires entries in {0, 1}")
    return Y
