"""Table-driven baseline coders: constant, per-pixel, center-difference,
and causal-context probability models.

Every probability that reaches a code length or the arithmetic coder is
clamped into [epsilon, 1 - epsilon]; a pixel that never varied in
training would otherwise cost infinite bits the first time the test set
disagrees with it.
"""

from __future__ import annotations

import numpy as np

from .base import BaseImageCoder, StreamCursor, bernoulli_bits
from .exceptions import EmptySet, TooManyCenters
from .validation import as_rng, check_binary_images, clamp_probabilities

DEFAULT_EPSILON = 1e-3

# Causal neighborhood: (dy, dx) offsets strictly left/above in raster
# order; bit b of the context index is the pixel at CONTEXT_TEMPLATE[b].
CONTEXT_TEMPLATE = (
    (0, -1), (0, -2), (-1, -2), (-1, -1), (-1, 0),
    (-1, 1), (-1, 2), (-2, -1), (-2, 0), (-2, 1),
)
N_CONTEXTS = 1 << len(CONTEXT_TEMPLATE)


class _StaticCursor(StreamCursor):
    """Cursor for coders whose probabilities do not depend on the bits."""

    def __init__(self, probs, to_image):
        self._probs = probs
        self._to_image = to_image
        self._bits = np.empty(len(probs), dtype=np.uint8)
        self._k = 0

    def next_p(self) -> float:
        return float(self._probs[self._k])

    def push(self, bit: int) -> None:
        self._bits[self._k] = bit
        self._k += 1

    def image(self) -> np.ndarray:
        return self._to_image(self._bits)


class ConstantProbability(BaseImageCoder):
    """One global probability of a pixel being one.

    With ``p=None`` the probability is fitted as the mean over all
    training pixels; passing ``p`` pins it (p=0.5 reproduces the raw
    image size).
    """

    def __init__(self, p=None, epsilon=DEFAULT_EPSILON):
        self.p = p
        self.epsilon = epsilon

    def fit(self, X, y=None):
        flat, (h, w) = check_binary_images(X)
        value = flat.mean(dtype=np.float64) if self.p is None else float(self.p)
        self.p_ = float(np.clip(value, self.epsilon, 1.0 - self.epsilon))
        self.height_, self.width_ = h, w
        return self

    def _bits(self, flat):
        return bernoulli_bits(flat, np.full(flat.shape[1], self.p_), clamp=self.epsilon)

    def stream_bits(self, image_flat, side):
        return np.asarray(image_flat, dtype=np.uint8).ravel()

    def begin_stream(self, side):
        return _StaticCursor(np.full(self.n_pixels_, self.p_), lambda bits: bits.copy())


class PixelwiseProbability(BaseImageCoder):
    """One probability per pixel location, shared across images."""

    def __init__(self, epsilon=DEFAULT_EPSILON):
        self.epsilon = epsilon

    def fit(self, X, y=None):
        flat, (h, w) = check_binary_images(X)
        self.p_ = clamp_probabilities(flat.mean(axis=0, dtype=np.float64), self.epsilon)
        self.height_, self.width_ = h, w
        return self

    def _bits(self, flat):
        return bernoulli_bits(flat, self.p_, clamp=self.epsilon)

    def stream_bits(self, image_flat, side):
        return np.asarray(image_flat, dtype=np.uint8).ravel()

    def begin_stream(self, side):
        return _StaticCursor(self.p_, lambda bits: bits.copy())


def _hamming_assign(flat, centers):
    """Index of the nearest center per image, ties to the lowest index."""
    x = flat.astype(np.float32)
    c = centers.astype(np.float32)
    # |x - c|_1 for binary vectors; the cross term is exact in float32
    d = x.sum(axis=1, keepdims=True) + c.sum(axis=1)[None, :] - 2.0 * (x @ c.T)
    return np.argmin(d, axis=1)


def _mismatch_frequencies(flat, centers, assignment):
    """Per-center mean of |x - center|; centers with no images get 0."""
    n_centers = centers.shape[0]
    counts = np.bincount(assignment, minlength=n_centers)
    freq = np.zeros((n_centers, centers.shape[1]))
    order = np.argsort(assignment, kind="stable")
    diff = (flat[order] != centers[assignment[order]]).astype(np.float64)
    nonempty = np.flatnonzero(counts)
    starts = np.concatenate(([0], np.cumsum(counts[nonempty])))[:-1]
    freq[nonempty] = np.add.reduceat(diff, starts, axis=0)
    freq[nonempty] /= counts[nonempty, None]
    return freq, counts


class NearestCenterCoder(BaseImageCoder):
    """Encode each image as a nearest-reference index plus its difference.

    Centers are drawn from the training images without replacement; the
    per-center, per-pixel mismatch probabilities are the clamped means of
    disagreement over the images assigned to that center. An image costs
    log2(n_centers) bits for the index (charged fractionally in the
    analytic accounting; the container stores ceil(log2 n) raw bits) plus
    the cost of the difference bits.
    """

    def __init__(self, n_centers=1000, epsilon=0.01, random_state=1):
        self.n_centers = n_centers
        self.epsilon = epsilon
        self.random_state = random_state

    def fit(self, X, y=None):
        flat, (h, w) = check_binary_images(X)
        if self.n_centers > flat.shape[0]:
            raise TooManyCenters(f"{self.n_centers} centers from {flat.shape[0]} images")
        rng = as_rng(self.random_state)
        chosen = rng.choice(flat.shape[0], size=self.n_centers, replace=False)
        self.centers_ = flat[np.sort(chosen)].copy()
        assignment = _hamming_assign(flat, self.centers_)
        freq, counts = _mismatch_frequencies(flat, self.centers_, assignment)
        self.mismatch_ = clamp_probabilities(freq, self.epsilon)
        self.assigned_counts_ = counts
        self.height_, self.width_ = h, w
        return self

    @property
    def index_bits_(self) -> float:
        return float(np.log2(self.centers_.shape[0]))

    @property
    def index_bits_raw_(self) -> int:
        return int(np.ceil(np.log2(self.centers_.shape[0])))

    def _bits(self, flat):
        assignment = _hamming_assign(flat, self.centers_)
        diff = (flat != self.centers_[assignment]).astype(np.float64)
        return bernoulli_bits(diff, self.mismatch_[assignment], clamp=self.epsilon) + self.index_bits_

    def encode_side(self, image_flat):
        return int(_hamming_assign(np.asarray(image_flat, dtype=np.uint8).reshape(1, -1), self.centers_)[0])

    def stream_bits(self, image_flat, side):
        return (np.asarray(image_flat, dtype=np.uint8).ravel() != self.centers_[side]).astype(np.uint8)

    def begin_stream(self, side):
        center = self.centers_[side]
        return _StaticCursor(self.mismatch_[side], lambda bits: (center ^ bits).astype(np.uint8))


def cross_validate_centers(X, n_centers_grid, epsilon_grid, *, n_folds=5, random_state=1,
                           max_images=None):
    """Pick (n_centers, epsilon) by k-fold validation inside the train set.

    Returns ``(best_n, best_epsilon, table)`` where table maps
    ``(n, epsilon)`` to the mean held-out bits per image. Deterministic
    given the seed; the raw mismatch frequencies are shared across the
    epsilon grid within each fold. ``max_images`` caps the images used
    for the search (a seeded subsample) to bound the distance-matrix
    cost on large corpora; the final model should be refitted on the
    full set with the selected settings.
    """
    flat, _ = check_binary_images(X)
    n_centers_grid = list(n_centers_grid)
    epsilon_grid = list(epsilon_grid)
    if not n_centers_grid or not epsilon_grid:
        raise ValueError("grids must be nonempty")
    rng = as_rng(random_state)
    if max_images is not None and flat.shape[0] > max_images:
        flat = flat[rng.choice(flat.shape[0], size=max_images, replace=False)]
    order = rng.permutation(flat.shape[0])
    folds = np.array_split(order, n_folds)
    table = {(n, eps): 0.0 for n in n_centers_grid for eps in epsilon_grid}
    for fold in folds:
        held = flat[fold]
        mask = np.ones(flat.shape[0], dtype=bool)
        mask[fold] = False
        rest = flat[mask]
        for n in n_centers_grid:
            if n > rest.shape[0]:
                raise TooManyCenters(f"{n} centers from {rest.shape[0]} fold images")
            chosen = rng.choice(rest.shape[0], size=n, replace=False)
            centers = rest[np.sort(chosen)]
            freq, _counts = _mismatch_frequencies(rest, centers, _hamming_assign(rest, centers))
            held_assign = _hamming_assign(held, centers)
            held_diff = (held != centers[held_assign]).astype(np.float64)
            for eps in epsilon_grid:
                mismatch = clamp_probabilities(freq, eps)
                bits = bernoulli_bits(held_diff, mismatch[held_assign], clamp=eps) + np.log2(n)
                table[(n, eps)] += float(np.mean(bits)) / n_folds
    best_n, best_eps = min(table, key=lambda key: (table[key], n_centers_grid.index(key[0]), epsilon_grid.index(key[1])))
    return best_n, best_eps, table


def _context_indices(images):
    """Context index of every pixel for a stack of (n, h, w) images.

    Pixel (r, c) reads template neighbor b at (r + dy, c + dx);
    out-of-image neighbors contribute zero.
    """
    n, h, w = images.shape
    ctx = np.zeros((n, h, w), dtype=np.int32)
    for b, (dy, dx) in enumerate(CONTEXT_TEMPLATE):
        shifted = np.zeros((n, h, w), dtype=np.int32)
        dst_r = slice(max(-dy, 0), h - max(dy, 0))
        src_r = slice(max(dy, 0), h - max(-dy, 0))
        dst_c = slice(max(-dx, 0), w - max(dx, 0))
        src_c = slice(max(dx, 0), w - max(-dx, 0))
        shifted[:, dst_r, dst_c] = images[:, src_r, src_c]
        ctx |= shifted << b
    return ctx


class ContextModel(BaseImageCoder):
    """Probability table over the ten-pixel causal neighborhood.

    Out-of-image template positions read as zero; contexts never seen in
    training predict 0.5 before clamping.
    """

    def __init__(self, epsilon=DEFAULT_EPSILON):
        self.epsilon = epsilon

    def fit(self, X, y=None):
        flat, (h, w) = check_binary_images(X)
        images = flat.reshape(-1, h, w)
        ctx = _context_indices(images)
        keys = ctx.ravel() * 2 + images.ravel()
        counts = np.bincount(keys, minlength=2 * N_CONTEXTS).reshape(N_CONTEXTS, 2)
        total = counts.sum(axis=1)
        p = np.full(N_CONTEXTS, 0.5)
        seen = total > 0
        p[seen] = counts[seen, 1] / total[seen]
        self.table_ = clamp_probabilities(p, self.epsilon)
        self.context_counts_ = total
        self.height_, self.width_ = h, w
        return self

    def _bits(self, flat):
        images = flat.reshape(-1, self.height_, self.width_)
        p = self.table_[_context_indices(images)].reshape(flat.shape[0], -1)
        return bernoulli_bits(flat, p, clamp=self.epsilon)

    def stream_bits(self, image_flat, side):
        return np.asarray(image_flat, dtype=np.uint8).ravel()

    def begin_stream(self, side):
        return _ContextCursor(self)


class _ContextCursor(StreamCursor):
    def __init__(self, model: ContextModel):
        self._m = model
        self._pixels = np.zeros(model.n_pixels_, dtype=np.uint8)
        self._k = 0

    def _context(self) -> int:
        m = self._m
        row, col = divmod(self._k, m.width_)
        ctx = 0
        for b, (dy, dx) in enumerate(CONTEXT_TEMPLATE):
            y, x = row + dy, col + dx
            if 0 <= y < m.height_ and 0 <= x < m.width_:
                ctx |= int(self._pixels[y * m.width_ + x]) << b
        return ctx

    def next_p(self) -> float:
        return float(self._m.table_[self._context()])

    def push(self, bit: int) -> None:
        self._pixels[self._k] = bit
        self._k += 1

    def image(self) -> np.ndarray:
        return self._pixels.copy()
