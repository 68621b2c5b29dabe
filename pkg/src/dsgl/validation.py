"""Input validation helpers for the estimator-facing API."""

from __future__ import annotations

import numpy as np

EVENT_COLUMNS = ("user_id", "item_id", "category_id", "timestamp")


def check_interaction_array(X, *, name: str = "X") -> np.ndarray:
    """Validate a (n, 4) array of [user, item, category, timestamp] rows.

    Values must be finite, integral and non-negative; the result is int64.
    """
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] != len(EVENT_COLUMNS):
        raise ValueError(
            f"{name} must be 2-D with columns {EVENT_COLUMNS}, got shape {arr.shape}")
    if arr.size == 0:
        return arr.astype(np.int64).reshape(0, len(EVENT_COLUMNS))
    if not np.issubdtype(arr.dtype, np.integer):
        farr = arr.astype(np.float64)
        if not np.all(np.isfinite(farr)):
            raise ValueError(f"{name} contains non-finite values")
        if not np.all(farr == np.round(farr)):
            raise ValueError(f"{name} must contain integer IDs and timestamps")
        arr = farr
    arr = arr.astype(np.int64)
    if arr.min() < 0:
        raise ValueError(f"{name} must be non-negative")
    return arr


def check_labels(y, n_rows: int) -> np.ndarray:
    arr = np.asarray(y)
    if arr.ndim != 1 or arr.shape[0] != n_rows:
        raise ValueError(f"y must be 1-D with {n_rows} entries, got shape {arr.shape}")
    arr = arr.astype(np.int64)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError("y must be binary {0, 1}")
    return arr


def check_vocab(arr: np.ndarray, num_users: int, num_items: int,
                num_categories: int, *, name: str = "X") -> None:
    """Reject IDs outside the vocabulary the model was fitted with."""
    if arr.shape[0] == 0:
        return
    for col, limit, what in ((0, num_users, "user"), (1, num_items, "item"),
                             (2, num_categories, "category")):
        top = int(arr[:, col].max())
        if top >= limit:
            raise ValueError(
                f"{name} contains {what} id {top}, but the model was fitted "
                f"with only {limit} {what}s")
