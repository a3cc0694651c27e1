"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np

from .exceptions import EmptySet, ShapeMismatch


def as_rng(random_state) -> np.random.Generator:
    """Coerce an int seed / Generator / None into a numpy Generator."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.default_rng(random_state)


def check_binary_images(X, *, shape=None, allow_empty=False):
    """Validate a stack of binary images and return it flattened.

    Accepts ``(n, height, width)`` or ``(n, n_pixels)`` arrays of {0, 1}
    values. Returns ``(flat, (height, width))`` where ``flat`` is a C-order
    uint8 array of shape ``(n, n_pixels)``. When the input is already flat
    the spatial shape is taken from ``shape`` (falling back to a single row
    of pixels, which is enough for estimators that ignore geometry).
    """
    X = np.asarray(X)
    if X.ndim == 3:
        n, h, w = X.shape
        flat = X.reshape(n, h * w)
        inferred = (h, w)
    elif X.ndim == 2:
        flat = X
        inferred = shape if shape is not None else (1, X.shape[1])
    else:
        raise ShapeMismatch(f"expected 2-d or 3-d image array, got ndim={X.ndim}")
    if shape is not None and inferred != tuple(shape):
        raise ShapeMismatch(f"images are {inferred}, estimator was fitted on {tuple(shape)}")
    if not allow_empty and flat.shape[0] == 0:
        raise EmptySet("need at least one image")
    if flat.size and (flat.min() < 0 or flat.max() > 1):
        bad = flat[(flat < 0) | (flat > 1)]
        raise ValueError(f"images must be binary (0/1); found value {bad.flat[0]}")
    return np.ascontiguousarray(flat, dtype=np.uint8), tuple(inferred)


def check_fitted_images(estimator, X):
    """Flatten ``X`` and check it against the estimator's fitted geometry."""
    return check_binary_images(X, shape=(estimator.height_, estimator.width_))[0]


def clamp_probabilities(p, epsilon):
    """Clip probabilities into [epsilon, 1 - epsilon]."""
    return np.clip(p, epsilon, 1.0 - epsilon)
