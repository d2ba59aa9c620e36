"""Input checks shared by the estimators."""

import numpy as np

from .exceptions import InvalidInputError, ShapeError, StateError

UNIT = "unit_0_1"
RAW = "raw_0_255"
SCALES = (UNIT, RAW)
SCALE_MAX = {UNIT: 1.0, RAW: 255.0}


def check_matrix(x, cols=None, name="X"):
    """Return ``x`` as a finite 2-D float64 array, optionally checking its width."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if cols is not None and arr.shape[1] != cols:
        raise ShapeError(f"{name} has {arr.shape[1]} columns, expected {cols}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains NaN or Inf")
    return arr


def check_labels(y, n=None, n_classes=10):
    y = np.asarray(y)
    if y.ndim != 1:
        raise ShapeError(f"labels must be 1-D, got shape {y.shape}")
    if n is not None and len(y) != n:
        raise ShapeError(f"{len(y)} labels for {n} samples")
    if y.size and (not np.issubdtype(y.dtype, np.integer)):
        if not np.all(np.mod(y, 1) == 0):
            raise InvalidInputError("labels must be integers")
    y = y.astype(np.int64)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise InvalidInputError(f"labels must lie in 0..{n_classes - 1}")
    return y


def check_scale(x, scale, tol=1e-9):
    """Verify that pixel values are within the declared scale."""
    if scale not in SCALES:
        raise StateError(f"unknown pixel scale {scale!r}")
    if x.size and (x.min() < -tol or x.max() > SCALE_MAX[scale] + tol):
        raise StateError(
            f"pixel values in [{x.min():.4g}, {x.max():.4g}] do not match scale {scale}"
        )
    return x


def check_random_state(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
