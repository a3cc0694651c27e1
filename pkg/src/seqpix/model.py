"""Autoregressive pixel model with exact per-pixel likelihoods.

Pixels are visited in a fixed order (the model's permutation). The
probability of the pixel at sweep position k is

    y_k = sigmoid( V[k] . sigmoid(h_u)  +  r_acc[k]  +  b_y[k] )

where ``h_u`` and ``r_acc`` accumulate, one consumed pixel at a time,
the hidden pre-activation ``b_h + sum_j U[:, j] * xb_j`` and the direct
skip term ``sum_j R[:, j] * xb_j``; ``xb_j`` is the pixel value minus its
training mean (or the raw value when mean subtraction is off). Updating
the accumulators costs O(n_hidden + n_pixels) per pixel, never a full
recompute.

Parameters are stored in sweep coordinates: column j of U belongs to the
pixel consumed at position j, row k of V / R / b_y to the prediction at
position k, and ``permutation_[k]`` says which raster pixel that is.
``x_ave_`` stays in raster coordinates. R is strictly lower triangular in
sweep coordinates; entries on or above the diagonal are never read and
are kept at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .base import BaseImageCoder, StreamCursor, bernoulli_bits
from .exceptions import OutOfOrderPixel, SizeMismatch, SweepComplete
from .validation import as_rng, check_binary_images

PROB_CLAMP = 1e-6

VARIANTS = {"full": (True, True), "uv_only": (True, False), "r_only": (False, True)}

_SIG_LO, _SIG_HI, _SIG_N = -40.0, 40.0, 1 << 16
_SIG_TABLE = None


def tabulated_sigmoid(x):
    """Sigmoid via a precomputed grid with linear interpolation.

    Absolute error stays below 1e-4 (tested below 1e-7); exists as an
    opt-in stand-in for the exact sigmoid on the per-pixel path.
    """
    global _SIG_TABLE
    if _SIG_TABLE is None:
        grid = np.linspace(_SIG_LO, _SIG_HI, _SIG_N)
        _SIG_TABLE = (grid, expit(grid))
    grid, values = _SIG_TABLE
    return np.interp(x, grid, values)


@dataclass
class SweepState:
    """Accumulators for one pass over an image; single-owner."""

    h_u: np.ndarray | None  # (n_hidden,) pre-activation, starts at b_h
    r_acc: np.ndarray | None  # (n_pixels,) direct-path accumulator, starts at 0
    k: int = 0  # pixels consumed so far


@dataclass
class PredictionTrace:
    """Per-pixel probabilities and code lengths for one image pass."""

    y: np.ndarray  # predicted P(pixel=1), sweep order, unclamped
    bits: np.ndarray  # per-pixel code length, clamped probabilities
    total_bits: float


class SequentialPixelModel(BaseImageCoder):
    """Sequentially trained autoregressive coder for binary images.

    Parameters
    ----------
    n_hidden : size of the hidden layer (ignored by the 'r_only' variant
        at inference but still allocated).
    variant : 'full', 'uv_only' (no direct path) or 'r_only' (no hidden
        path).
    permutation : pixel visiting order used for training and coding:
        'raster', 'fixed_random', or 'per_iteration_random' (a fresh
        order every SGD step; the stored inference order is then raster).
    eta0, t0 : learning-rate schedule eta(t) = eta0 / (1 + t / t0);
        t0 defaults to 10x the number of SGD training images.
    l2_lambda : L2 penalty on U, V, R (and biases if ``l2_on_biases``).
    max_iterations, eval_every, patience, validation_fraction : SGD
        budget and early-stopping policy; validation is the trailing
        fraction of the fitted images, never used for SGD steps.
    subtract_mean : feed pixel minus training mean into the accumulators.
    hidden_mode : 'save' keeps every hidden vector from the forward pass;
        'recompute' rebuilds them in the backward pass by progressively
        subtracting input contributions (slower, less memory).
    clamp : probability clip applied to code lengths and coder input
        (never to gradients).
    sigmoid_table : use the interpolated sigmoid on the per-pixel path.
    random_state : seed controlling init, permutations and image order.
    """

    def __init__(
        self,
        n_hidden=200,
        variant="full",
        permutation="fixed_random",
        eta0=0.05,
        t0=None,
        l2_lambda=0.0,
        max_iterations=200_000,
        eval_every=25_000,
        patience=5,
        validation_fraction=0.1,
        subtract_mean=True,
        hidden_mode="save",
        l2_on_biases=False,
        clamp=PROB_CLAMP,
        sigmoid_table=False,
        random_state=1,
    ):
        self.n_hidden = n_hidden
        self.variant = variant
        self.permutation = permutation
        self.eta0 = eta0
        self.t0 = t0
        self.l2_lambda = l2_lambda
        self.max_iterations = max_iterations
        self.eval_every = eval_every
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.subtract_mean = subtract_mean
        self.hidden_mode = hidden_mode
        self.l2_on_biases = l2_on_biases
        self.clamp = clamp
        self.sigmoid_table = sigmoid_table
        self.random_state = random_state

    # -- construction ------------------------------------------------------

    @classmethod
    def from_arrays(
        cls,
        *,
        U,
        V,
        R,
        b_h,
        b_y,
        x_ave,
        permutation,
        width,
        height,
        use_uv=True,
        use_r=True,
        subtract_mean=True,
        **params,
    ) -> "SequentialPixelModel":
        """Build a ready-to-use model from explicit parameter arrays."""
        if not (use_uv or use_r):
            raise ValueError("at least one of the hidden/direct paths must be on")
        model = cls(n_hidden=int(np.shape(U)[0]), variant=_variant_name(use_uv, use_r), **params)
        model.subtract_mean = subtract_mean
        n_x = width * height
        model.U_ = np.ascontiguousarray(U, dtype=np.float64)
        model.V_ = np.ascontiguousarray(V, dtype=np.float64)
        model.R_ = np.ascontiguousarray(R, dtype=np.float64)
        model.b_h_ = np.asarray(b_h, dtype=np.float64).copy()
        model.b_y_ = np.asarray(b_y, dtype=np.float64).copy()
        model.x_ave_ = np.asarray(x_ave, dtype=np.float64).copy()
        model.permutation_ = np.asarray(permutation, dtype=np.int64).copy()
        model.width_ = int(width)
        model.height_ = int(height)
        model.use_uv_ = bool(use_uv)
        model.use_r_ = bool(use_r)
        model.subtract_mean_ = bool(subtract_mean)
        n_h = model.U_.shape[0]
        shapes = {
            "U": (model.U_.shape, (n_h, n_x)),
            "V": (model.V_.shape, (n_x, n_h)),
            "R": (model.R_.shape, (n_x, n_x)),
            "b_h": (model.b_h_.shape, (n_h,)),
            "b_y": (model.b_y_.shape, (n_x,)),
            "x_ave": (model.x_ave_.shape, (n_x,)),
            "permutation": (model.permutation_.shape, (n_x,)),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise ValueError(f"{name} has shape {got}, expected {want}")
        if sorted(model.permutation_.tolist()) != list(range(n_x)):
            raise ValueError("permutation must be a bijection on pixel indices")
        return model

    # -- incremental sweep ---------------------------------------------------

    def init_sweep(self) -> SweepState:
        """Fresh accumulators: hidden at b_h, direct path at zero."""
        h_u = self.b_h_.copy() if self.use_uv_ else None
        r_acc = np.zeros(self.n_pixels_) if self.use_r_ else None
        return SweepState(h_u=h_u, r_acc=r_acc, k=0)

    def predict_next(self, state: SweepState) -> float:
        """Probability that the pixel at position state.k is one (unclamped)."""
        k = state.k
        if k >= self.n_pixels_:
            raise SweepComplete(f"all {self.n_pixels_} pixels already consumed")
        sig = tabulated_sigmoid if self.sigmoid_table else expit
        t = self.b_y_[k]
        if self.use_uv_:
            t += float(self.V_[k] @ sig(state.h_u))
        if self.use_r_:
            t += state.r_acc[k]
        return float(sig(t))

    def consume_pixel(self, state: SweepState, j: int, x_j: int) -> SweepState:
        """Fold pixel value x_j (at sweep position j) into the accumulators."""
        if state.k != j:
            raise OutOfOrderPixel(f"sweep is at position {state.k}, got pixel {j}")
        if j >= self.n_pixels_:
            raise SweepComplete(f"position {j} beyond {self.n_pixels_} pixels")
        xb = float(x_j) - self.x_ave_[self.permutation_[j]] if self.subtract_mean_ else float(x_j)
        if xb != 0.0:
            if self.use_uv_:
                state.h_u += self.U_[:, j] * xb
            if self.use_r_:
                state.r_acc += self.R_[:, j] * xb
        state.k = j + 1
        return state

    # -- whole-image passes ---------------------------------------------------

    def forward_trace(self, image_flat) -> PredictionTrace:
        """Predict every pixel of one raster image; vectorized over positions."""
        image_flat = np.asarray(image_flat).ravel()
        if image_flat.shape[0] != self.n_pixels_:
            raise SizeMismatch(f"image has {image_flat.shape[0]} pixels, model {self.n_pixels_}")
        xs = image_flat[self.permutation_].astype(np.float64)
        y = _dense_forward(self, xs[None, :])[0]
        bits = _pixel_bits(xs, y, self.clamp)
        return PredictionTrace(y=y, bits=bits, total_bits=float(bits.sum()))

    def _bits(self, flat: np.ndarray) -> np.ndarray:
        xs = flat[:, self.permutation_].astype(np.float64)
        out = np.empty(flat.shape[0])
        n_h = self.U_.shape[0]
        work = None
        if self.use_uv_:
            step = _batch_rows(n_h, self.n_pixels_)
            bound = min(step, flat.shape[0])
            work = (
                np.empty((bound, self.n_pixels_, n_h)),
                np.empty((bound, self.n_pixels_, n_h)),
            )
        else:
            step = 1024
        for lo in range(0, flat.shape[0], step):
            chunk = xs[lo : lo + step]
            b = chunk.shape[0]
            sub = (work[0][:b], work[1][:b]) if work is not None else None
            y = _dense_forward(self, chunk, work=sub)
            out[lo : lo + b] = bernoulli_bits(chunk, y, clamp=self.clamp)
        return out

    # -- generation -------------------------------------------------------------

    def sample_image(self, random_state=None) -> np.ndarray:
        """Draw one image by sweeping: predict, sample, consume, repeat."""
        rng = as_rng(random_state)
        state = self.init_sweep()
        bits = np.empty(self.n_pixels_, dtype=np.uint8)
        for k in range(self.n_pixels_):
            p = self.predict_next(state)
            bits[k] = rng.random() < p
            self.consume_pixel(state, k, int(bits[k]))
        out = np.empty(self.n_pixels_, dtype=np.uint8)
        out[self.permutation_] = bits
        return out

    def sample(self, n_samples: int, random_state=None) -> np.ndarray:
        """Draw ``n_samples`` independent images; vectorized across samples.

        Consumes the generator differently from per-image
        :meth:`sample_image`, so the two paths give different (equally
        valid) draws for the same seed.
        """
        rng = as_rng(random_state)
        n_pix, n_h = self.n_pixels_, self.U_.shape[0]
        sig = tabulated_sigmoid if self.sigmoid_table else expit
        h_u = np.repeat(self.b_h_[None, :], n_samples, axis=0) if self.use_uv_ else None
        r_acc = np.zeros((n_samples, n_pix)) if self.use_r_ else None
        bits = np.empty((n_samples, n_pix), dtype=np.uint8)
        mean_sweep = self.x_ave_[self.permutation_] if self.subtract_mean_ else None
        for k in range(n_pix):
            t = np.full(n_samples, self.b_y_[k])
            if self.use_uv_:
                t += sig(h_u) @ self.V_[k]
            if self.use_r_:
                t += r_acc[:, k]
            y = sig(t)
            drawn = (rng.random(n_samples) < y).astype(np.uint8)
            bits[:, k] = drawn
            xb = drawn.astype(np.float64)
            if mean_sweep is not None:
                xb -= mean_sweep[k]
            if self.use_uv_:
                h_u += np.outer(xb, self.U_[:, k])
            if self.use_r_:
                r_acc += np.outer(xb, self.R_[:, k])
        out = np.empty_like(bits)
        out[:, self.permutation_] = bits
        return out.reshape(n_samples, self.height_, self.width_)

    # -- filter export -------------------------------------------------------

    def export_filters(self, which: str) -> np.ndarray:
        """Render hidden-unit or prediction-row weights as gray images.

        'u' yields one image per hidden unit from the rows of U, 'v' one
        per hidden unit from the columns of V, 'r' one per pixel from the
        rows of R. Filters are mapped back to raster layout and rescaled
        per filter so min -> 0 and max -> 255 (an all-constant filter
        renders as black).
        """
        which = which.lower()
        if which == "u":
            filters = self.U_
        elif which == "v":
            filters = self.V_.T
        elif which == "r":
            filters = self.R_
        else:
            raise ValueError(f"which must be 'u', 'v' or 'r', got {which!r}")
        n_pix = self.n_pixels_
        raster = np.empty_like(filters)
        raster[:, self.permutation_] = filters
        lo = raster.min(axis=1, keepdims=True)
        span = raster.max(axis=1, keepdims=True) - lo
        grays = np.zeros_like(raster)
        nonflat = span[:, 0] > 0
        grays[nonflat] = (raster[nonflat] - lo[nonflat]) / span[nonflat] * 255.0
        return np.rint(grays).astype(np.uint8).reshape(-1, self.height_, self.width_)

    # -- streaming-coder contract ---------------------------------------------

    def stream_bits(self, image_flat, side) -> np.ndarray:
        image_flat = np.asarray(image_flat, dtype=np.uint8).ravel()
        if image_flat.shape[0] != self.n_pixels_:
            raise SizeMismatch(f"image has {image_flat.shape[0]} pixels, model {self.n_pixels_}")
        return image_flat[self.permutation_]

    def begin_stream(self, side) -> "_SweepCursor":
        return _SweepCursor(self)

    # -- sklearn plumbing --------------------------------------------------------

    def fit(self, X, y=None):
        """Train with sequential-gradient descent and early stopping."""
        from .training import TrainConfig, fit_sequential_model

        flat, (h, w) = check_binary_images(X)
        config = TrainConfig(
            n_hidden=self.n_hidden,
            variant=self.variant,
            permutation_strategy=_canon_strategy(self.permutation),
            eta0=self.eta0,
            t0=self.t0,
            l2_lambda=self.l2_lambda,
            max_iterations=self.max_iterations,
            eval_every=self.eval_every,
            patience=self.patience,
            validation_fraction=self.validation_fraction,
            subtract_mean=self.subtract_mean,
            hidden_mode=self.hidden_mode,
            l2_on_biases=self.l2_on_biases,
            seed=self.random_state,
        )
        trained, report = fit_sequential_model(flat, width=w, height=h, config=config)
        for name in ("U_", "V_", "R_", "b_h_", "b_y_", "x_ave_", "permutation_",
                     "width_", "height_", "use_uv_", "use_r_", "subtract_mean_"):
            setattr(self, name, getattr(trained, name))
        self.report_ = report
        return self


class _SweepCursor(StreamCursor):
    def __init__(self, model: SequentialPixelModel):
        self._model = model
        self._state = model.init_sweep()
        self._bits = np.empty(model.n_pixels_, dtype=np.uint8)

    def next_p(self) -> float:
        y = self._model.predict_next(self._state)
        c = self._model.clamp
        return min(max(y, c), 1.0 - c)

    def push(self, bit: int) -> None:
        k = self._state.k
        self._bits[k] = bit
        self._model.consume_pixel(self._state, k, bit)

    def image(self) -> np.ndarray:
        out = np.empty_like(self._bits)
        out[self._model.permutation_] = self._bits
        return out


def _variant_name(use_uv: bool, use_r: bool) -> str:
    for name, flags in VARIANTS.items():
        if flags == (use_uv, use_r):
            return name
    raise ValueError("at least one of the hidden/direct paths must be on")


def _canon_strategy(value: str) -> str:
    aliases = {
        "raster": "raster",
        "fixed": "fixed_random",
        "fixed_random": "fixed_random",
        "per_iter": "per_iteration_random",
        "per_iteration": "per_iteration_random",
        "per_iteration_random": "per_iteration_random",
    }
    if value not in aliases:
        raise ValueError(f"unknown permutation strategy {value!r}")
    return aliases[value]


def _batch_rows(n_hidden: int, n_pixels: int, budget_bytes: int = 64 << 20) -> int:
    per_row = max(n_hidden, 1) * n_pixels * 8 * 2
    return max(1, min(1024, budget_bytes // per_row))


def _pixel_bits(xs, y, clamp):
    yc = np.clip(y, clamp, 1.0 - clamp)
    return -(xs * np.log2(yc) + (1.0 - xs) * np.log2(1.0 - yc))


def _sigmoid_inplace(x: np.ndarray) -> np.ndarray:
    """1 / (1 + exp(-x)) computed in place; saturates cleanly at 0/1."""
    with np.errstate(over="ignore"):
        np.negative(x, out=x)
        np.exp(x, out=x)
        x += 1.0
        np.reciprocal(x, out=x)
    return x


def _dense_forward(model: SequentialPixelModel, xs: np.ndarray, work=None) -> np.ndarray:
    """Whole-sweep probabilities for a batch of sweep-ordered images.

    Equivalent to running predict/consume across every position; the
    hidden pre-activations come from a running prefix sum over consumed
    pixels, so position k only ever sees pixels before it. ``work`` may
    supply two (n, n_pixels, n_hidden) scratch buffers to reuse.
    """
    from . import _kernels

    xb = xs - model.x_ave_[model.permutation_] if model.subtract_mean_ else xs
    yv = np.broadcast_to(model.b_y_, xb.shape).copy()
    if model.use_r_:
        yv += xb @ model.R_.T  # R strictly lower triangular in sweep space
    if model.use_uv_:
        ut = np.ascontiguousarray(model.U_.T)  # (n_x, n_h)
        if work is None:
            shape = (xs.shape[0], ut.shape[0], ut.shape[1])
            m, h = np.empty(shape), np.empty(shape)
        else:
            m, h = work
        np.multiply(xb[:, :, None], ut[None, :, :], out=m)  # (n, n_x, n_h)
        _kernels.prefix_rows_batch(m)
        h[:, 0, :] = model.b_h_
        np.add(m[:, :-1, :], model.b_h_[None, None, :], out=h[:, 1:, :])
        _sigmoid_inplace(h)
        yv += np.einsum("kh,nkh->nk", model.V_, h)
    return _sigmoid_inplace(yv)
