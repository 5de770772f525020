"""Input validation helpers shared by the tabular core and the estimators."""
from __future__ import annotations

import numpy as np

from .exceptions import ValidationError

PROB_ATOL = 1e-12


def check_array(x, *, ndim=None, shape=None, name="array", dtype=np.float64):
    arr = np.asarray(x, dtype=dtype)
    if ndim is not None and arr.ndim != ndim:
        raise ValidationError(f"{name}: expected {ndim} dimensions, got {arr.ndim}")
    if shape is not None and arr.shape != tuple(shape):
        raise ValidationError(f"{name}: expected shape {tuple(shape)}, got {arr.shape}")
    if np.issubdtype(arr.dtype, np.floating) and not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains non-finite values")
    return arr


def check_distribution(p, *, axis=-1, atol=PROB_ATOL, name="distribution"):
    """Check that ``p`` is elementwise nonnegative and sums to one along ``axis``."""
    arr = check_array(p, name=name)
    if np.any(arr < 0):
        idx = np.unravel_index(int(np.argmin(arr)), arr.shape)
        raise ValidationError(f"{name}: negative entry at index {idx}")
    sums = arr.sum(axis=axis)
    bad = np.abs(sums - 1.0) > atol
    if np.any(bad):
        where = np.argwhere(np.atleast_1d(bad))[0]
        raise ValidationError(
            f"{name}: rows must sum to 1 within {atol:g}; row {tuple(where)} sums to "
            f"{np.atleast_1d(sums)[tuple(where)]!r}"
        )
    return arr


def check_index_batch(batch, sizes, name="batch"):
    """Validate an integer batch of shape (n, len(sizes)) against per-column ranges."""
    arr = np.asarray(batch)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != len(sizes):
        raise ValidationError(
            f"{name}: expected shape (n, {len(sizes)}) for signature of {len(sizes)} blocks, "
            f"got {arr.shape}"
        )
    if arr.shape[0] == 0:
        raise ValidationError(f"{name}: empty batch")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValidationError(f"{name}: expected integer indices, got {arr.dtype}")
    for j, n in enumerate(sizes):
        col = arr[:, j]
        if col.min() < 0 or col.max() >= n:
            raise ValidationError(f"{name}: column {j} out of range [0, {n})")
    return arr.astype(np.int64, copy=False)


def check_transitions(X, n_states, n_actions, *, require_actions=False, name="X"):
    """Validate an (n, 3) array of (s, a, s') records; ``a == -1`` marks a missing action."""
    arr = np.asarray(X)
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] == 0:
        raise ValidationError(f"{name}: expected non-empty (n, 3) array of (s, a, s'), got {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValidationError(f"{name}: expected integer records, got {arr.dtype}")
    s, a, sn = arr[:, 0], arr[:, 1], arr[:, 2]
    if s.min() < 0 or s.max() >= n_states or sn.min() < 0 or sn.max() >= n_states:
        raise ValidationError(f"{name}: state index out of range [0, {n_states})")
    if a.min() < -1 or a.max() >= n_actions:
        raise ValidationError(f"{name}: action index out of range [-1, {n_actions})")
    if require_actions and np.any(a < 0):
        raise ValidationError(f"{name}: records without actions supplied to an action-based learner")
    return arr.astype(np.int64, copy=False)
