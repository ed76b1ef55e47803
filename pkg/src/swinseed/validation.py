"""Input checks shared by the estimator and the command line."""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigurationError, DimensionError


def check_images(X, image_size=None):
    """Return ``X`` as a float32 (n, 3, H, W) array with values in [0, 1]."""
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1] != 3:
        raise DimensionError(f"expected images shaped (n, 3, H, W), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("no images given")
    if image_size is not None and X.shape[2:] != (image_size, image_size):
        raise ConfigurationError(
            f"images are {X.shape[2]}x{X.shape[3]} but the model expects {image_size}x{image_size}"
        )
    X = X.astype(np.float32, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError("images contain non-finite values")
    if X.min() < 0 or X.max() > 1:
        raise ValueError("image values must lie in [0, 1]")
    return X


def check_label_matrix(y, n_samples=None, n_classes=None):
    """Return ``y`` as a (n, C) uint8 indicator matrix."""
    y = np.asarray(y)
    if y.ndim != 2:
        raise DimensionError(f"labels must be a 2-d indicator matrix, got shape {y.shape}")
    if n_samples is not None and y.shape[0] != n_samples:
        raise DimensionError(f"{y.shape[0]} label rows for {n_samples} images")
    if n_classes is not None and y.shape[1] != n_classes:
        raise DimensionError(f"{y.shape[1]} label columns, model has {n_classes} classes")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1 indicators")
    return y.astype(np.uint8)
