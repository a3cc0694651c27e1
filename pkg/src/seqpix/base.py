"""Common estimator surface for everything that can code images to bits.

Each coder is an sklearn-style estimator: hyperparameters in ``__init__``,
``fit(X)`` learns from binary images and returns ``self``, fitted state in
trailing-underscore attributes. ``X`` may be ``(n, height, width)`` or
``(n, n_pixels)``.

On top of that, coders expose a streaming interface the arithmetic codec
drives one bit at a time:

  * ``encode_side(image)``  -> optional integer side information (e.g. a
    codebook index) the decoder needs before the bit stream starts;
  * ``stream_bits(image, side)`` -> the image's bits in stream order;
  * ``begin_stream(side)`` -> a cursor with ``next_p()`` / ``push(bit)`` /
    ``image()``.

The cursor is the single source of probabilities for both directions:
encoding pushes the true bits, decoding pushes decoded bits, so both
sides walk an identical float path and quantize identical values.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .validation import check_fitted_images


class StreamCursor:
    """One in-flight image coding pass; single-owner, not shared."""

    def next_p(self) -> float:
        """Probability that the next stream bit is one."""
        raise NotImplementedError

    def push(self, bit: int) -> None:
        """Record the realized value of the bit just predicted."""
        raise NotImplementedError

    def image(self) -> np.ndarray:
        """Raster pixels reconstructed from the pushed bits."""
        raise NotImplementedError


class BaseImageCoder(BaseEstimator):
    """Shared scoring plumbing; subclasses implement fit and the streams."""

    # -- sklearn-style scoring ------------------------------------------

    def bits_per_image(self, X) -> np.ndarray:
        """Ideal code length of each image in bits (lower is better)."""
        check_is_fitted(self)
        flat = check_fitted_images(self, X)
        return self._bits(flat)

    def score_samples(self, X) -> np.ndarray:
        """Per-image log2-likelihood (negative code length)."""
        return -self.bits_per_image(X)

    def score(self, X, y=None) -> float:
        """Mean log2-likelihood over ``X``."""
        return float(np.mean(self.score_samples(X)))

    def mean_bits(self, X) -> float:
        """Mean ideal code length in bits per image."""
        return float(np.mean(self.bits_per_image(X)))

    # -- streaming contract ---------------------------------------------

    @property
    def n_pixels_(self) -> int:
        return self.width_ * self.height_

    def encode_side(self, image_flat) -> int | None:
        """Side information for one image; None when the coder needs none."""
        return None

    def stream_bits(self, image_flat, side) -> np.ndarray:
        """Bits to feed the arithmetic coder, in this coder's stream order."""
        raise NotImplementedError

    def begin_stream(self, side) -> StreamCursor:
        raise NotImplementedError

    # -- hooks filled in by subclasses ------------------------------------

    def _bits(self, flat: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def bernoulli_bits(x, p, *, clamp: float, axis=-1) -> np.ndarray:
    """Sum over pixels of -x*log2(p) - (1-x)*log2(1-p) with p clipped."""
    x = np.asarray(x, dtype=np.float64)
    p = np.clip(np.asarray(p, dtype=np.float64), clamp, 1.0 - clamp)
    return -np.sum(x * np.log2(p) + (1.0 - x) * np.log2(1.0 - p), axis=axis)
