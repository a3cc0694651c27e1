"""Sequential-gradient training for the autoregressive pixel model.

One training step runs the forward sweep over a single image, then walks
the positions in reverse accumulating exact gradients of the natural-log
likelihood:

    dyv[k]   = y[k] - x[k]
    grad b_y = dyv
    grad V[k] = dyv[k] * h[k]
    grad R[k, q] = dyv[k] * xb[q]            for q < k
    dhv[k]   = (V[k] * dyv[k]) . sigmoid'(hidden pre-activation at k)
    grad U[:, q] = (sum of dhv[k] over k > q) * xb[q]
    grad b_h = sum of dhv[k] over all k

The hidden-path gradient for the pixel consumed at position q collects
contributions from every later prediction (a suffix sum over dhv), and
the whole gradient is computed before any parameter moves, so it matches
central finite differences of the loss at the pre-step parameters.

Updates subtract eta * (gradient + l2 * parameter). Reported per-image
code lengths use log2; gradients use unclamped probabilities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from . import _kernels
from .exceptions import EmptySet, NonFiniteGradient, SizeMismatch
from .model import PROB_CLAMP, SequentialPixelModel, VARIANTS, _pixel_bits
from .validation import as_rng

_BY_INIT_CLAMP = 1e-3  # makes the starting model equal the per-pixel table coder


@dataclass
class TrainConfig:
    """Hyperparameters for one training run."""

    n_hidden: int = 200
    variant: str = "full"
    permutation_strategy: str = "fixed_random"  # or 'raster', 'per_iteration_random'
    eta0: float = 0.05
    t0: float | None = None  # None -> 10x the number of SGD images
    l2_lambda: float = 0.0
    max_iterations: int = 200_000
    eval_every: int = 25_000
    patience: int = 5
    validation_fraction: float = 0.1
    subtract_mean: bool = True
    hidden_mode: str = "save"  # or 'recompute'
    l2_on_biases: bool = False
    seed: int = 1

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ValueError("eta0 must be positive")
        if self.t0 is not None and self.t0 <= 0:
            raise ValueError("t0 must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {sorted(VARIANTS)}")
        if self.hidden_mode not in ("save", "recompute"):
            raise ValueError("hidden_mode must be 'save' or 'recompute'")


@dataclass
class EvalPoint:
    iteration: int
    train_bits: float
    val_bits: float


@dataclass
class TrainReport:
    """Learning curve and the early-stopping outcome."""

    iterations_run: int = 0
    curve: list[EvalPoint] = field(default_factory=list)
    best_val_bits: float = float("inf")
    best_iteration: int = 0


def sweep_gradients(model: SequentialPixelModel, image_flat, permutation=None, *, hidden_mode=None):
    """Forward pass plus exact parameter gradients for one image.

    Returns ``(bits, grads)`` where bits is the clamped log2 code length
    and grads maps 'U', 'V', 'R', 'b_h', 'b_y' to arrays in the same
    (possibly permuted) coordinates the caller addressed. When
    ``permutation`` is given it overrides the model's stored order for
    this pass: parameters are read through it, so gradients come back in
    that gathered frame.
    """
    n_x = model.n_pixels_
    image_flat = np.asarray(image_flat).ravel()
    if image_flat.shape[0] != n_x:
        raise SizeMismatch(f"image has {image_flat.shape[0]} pixels, model {n_x}")
    perm = model.permutation_ if permutation is None else np.asarray(permutation)
    use_uv, use_r = model.use_uv_, model.use_r_
    mode = hidden_mode or "save"

    if permutation is None:
        U, V, R, b_y = model.U_, model.V_, model.R_, model.b_y_
    else:
        U = model.U_[:, perm] if use_uv else model.U_
        V = model.V_[perm] if use_uv else model.V_
        R = model.R_[np.ix_(perm, perm)] if use_r else model.R_
        b_y = model.b_y_[perm]
    b_h = model.b_h_

    xs = image_flat[perm].astype(np.float64)
    xb = xs - model.x_ave_[perm] if model.subtract_mean_ else xs

    grads = {}
    yv = b_y.copy()
    if use_uv:
        m = U * xb[None, :]  # column q = contribution of the pixel consumed at q
        cum = np.cumsum(m[:, :-1], axis=1)
        hu = np.empty_like(m)
        hu[:, 0] = b_h
        hu[:, 1:] = b_h[:, None] + cum
        h = expit(hu)
        yv += np.einsum("kh,hk->k", V, h)
    if use_r:
        if permutation is None:
            yv += R @ xb  # strictly lower triangular rows
        else:
            yv += np.tril(R, -1) @ xb
    y = expit(yv)

    dyv = y - xs  # d(nats)/d(pre-sigmoid), exact
    grads["b_y"] = dyv
    if use_r:
        grads["R"] = np.tril(np.outer(dyv, xb), -1)
    if use_uv:
        grads["V"] = dyv[:, None] * h.T
        if mode == "recompute":
            dhv = _dhv_by_subtraction(U, V, xb, dyv, hu_final=hu[:, -1] + m[:, -1])
        else:
            dhv = (V.T * dyv[None, :]) * (h * (1.0 - h))  # (n_h, n_x)
        total = dhv.sum(axis=1)
        grads["b_h"] = total
        suffix = total[:, None] - np.cumsum(dhv, axis=1)  # sum over positions > q
        grads["U"] = suffix * xb[None, :]

    bits = float(_pixel_bits(xs, y, model.clamp).sum())
    return bits, grads


def _dhv_by_subtraction(U, V, xb, dyv, hu_final):
    """Hidden-path backward that rebuilds each hidden vector by peeling
    input contributions off the all-pixels-consumed pre-activation, one
    position at a time, instead of reading the forward history. Exists
    for parity with the saved-history mode (updates agree to ~1e-12
    relative); this implementation still materializes the forward pass,
    so it trades speed, not memory."""
    n_h, n_x = U.shape
    dhv = np.empty((n_h, n_x))
    hu = hu_final.copy()
    for j in range(n_x - 1, -1, -1):
        hu -= U[:, j] * xb[j]  # now the pre-activation used to predict j
        hj = expit(hu)
        dhv[:, j] = (V[j] * dyv[j]) * (hj * (1.0 - hj))
    return dhv


def train_step(model: SequentialPixelModel, image_flat, permutation=None, *, eta,
               l2_lambda=0.0, hidden_mode="save", l2_on_biases=False):
    """One SGD update on one image; returns the pre-update code length."""
    bits, grads = sweep_gradients(model, image_flat, permutation, hidden_mode=hidden_mode)
    if not np.isfinite(bits):
        raise NonFiniteGradient(f"forward pass produced non-finite loss ({bits})")
    perm = None if permutation is None else np.asarray(permutation)
    _apply_update(model, grads, perm, eta=eta, l2_lambda=l2_lambda, l2_on_biases=l2_on_biases)
    return bits


def _apply_update(model, grads, perm, *, eta, l2_lambda, l2_on_biases):
    if perm is None:
        if "U" in grads:
            model.U_ -= eta * grads["U"]
            model.V_ -= eta * grads["V"]
        if "R" in grads:
            model.R_ -= eta * grads["R"]
        model.b_y_ -= eta * grads["b_y"]
    else:
        if "U" in grads:
            model.U_[:, perm] -= eta * grads["U"]
            model.V_[perm] -= eta * grads["V"]
        if "R" in grads:
            model.R_[np.ix_(perm, perm)] -= eta * grads["R"]
        model.b_y_[perm] -= eta * grads["b_y"]
    if "b_h" in grads:
        model.b_h_ -= eta * grads["b_h"]
    if l2_lambda > 0.0:
        decay = eta * l2_lambda
        if model.use_uv_:
            model.U_ -= decay * model.U_
            model.V_ -= decay * model.V_
        if model.use_r_:
            model.R_ -= decay * model.R_
        if l2_on_biases:
            model.b_h_ -= decay * model.b_h_
            model.b_y_ -= decay * model.b_y_


class _FastTrainer:
    """Fused single-image SGD on float32 copies of the parameters.

    Numerically it is :func:`train_step` (same gradients, same update
    order) with the dtype narrowed, every large temporary preallocated,
    U kept transposed for contiguous row scans, and the heavy loops
    dispatched through :mod:`seqpix._kernels`; agreement with the
    reference path is tested to float32 precision. Used by the fitting
    loop for the fixed-order strategies; snapshots are exported back to
    float64 with the never-read half of R zeroed.
    """

    def __init__(self, model: SequentialPixelModel, clamp: float):
        f32 = np.float32
        self.use_uv = model.use_uv_
        self.use_r = model.use_r_
        self.perm = model.permutation_
        self.clamp = f32(clamp)
        self.Ut = np.ascontiguousarray(model.U_.T, dtype=f32)  # (n_x, n_h)
        self.V = np.ascontiguousarray(model.V_, dtype=f32)  # (n_x, n_h)
        self.R = model.R_.astype(f32)
        self.b_h = model.b_h_.astype(f32)
        self.b_y = model.b_y_.astype(f32)
        self._proto = model
        n_x, n_h = self.Ut.shape
        self.xave_sweep = (
            model.x_ave_[self.perm].astype(f32) if model.subtract_mean_ else None
        )
        self.m = np.empty((n_x, n_h), dtype=f32)
        self.h = np.empty((n_x, n_h), dtype=f32)
        self.yv = np.empty(n_x, dtype=f32)

    def step(self, x_raster: np.ndarray, eta: float, l2: float, l2_on_biases: bool) -> float:
        f32 = np.float32
        xs = x_raster[self.perm].astype(f32)
        xb = xs - self.xave_sweep if self.xave_sweep is not None else xs
        Ut, V, R, m, h = self.Ut, self.V, self.R, self.m, self.h

        yv = self.yv
        yv[:] = self.b_y
        if self.use_r:
            yv += R @ xb
        if self.use_uv:
            np.multiply(Ut, xb[:, None], out=m)
            _kernels.prefix_rows(m)
            h[0] = self.b_h
            np.add(m[:-1], self.b_h[None, :], out=h[1:])
            _sig32(h)
            yv += np.einsum("kh,kh->k", V, h)
        y = _sig32(yv.copy())

        yc = np.clip(y, self.clamp, 1.0 - self.clamp)
        bits = float(-(xs * np.log2(yc) + (1.0 - xs) * np.log2(1.0 - yc)).sum())

        dyv = y - xs
        if self.use_uv:
            total = _kernels.uv_backward(Ut, V, h, dyv, xb, eta)
            self.b_h -= f32(eta) * total
        if self.use_r:
            _kernels.r_update(R, dyv, xb, eta)
        self.b_y -= f32(eta) * dyv
        if l2 > 0.0:
            decay = f32(eta * l2)
            if self.use_uv:
                Ut -= decay * Ut
                V -= decay * V
            if self.use_r:
                R -= decay * R
            if l2_on_biases:
                self.b_h -= decay * self.b_h
                self.b_y -= decay * self.b_y
        return bits

    def finite(self) -> bool:
        arrays = [self.b_y, self.b_h]
        if self.use_uv:
            arrays += [self.Ut, self.V]
        if self.use_r:
            arrays.append(self.R)
        return all(np.all(np.isfinite(a)) for a in arrays)

    def export(self) -> SequentialPixelModel:
        proto = self._proto
        R64 = self.R.astype(np.float64)
        return SequentialPixelModel.from_arrays(
            U=self.Ut.T.astype(np.float64),
            V=self.V.astype(np.float64),
            R=np.tril(R64, -1) if self.use_r else R64,
            b_h=self.b_h.astype(np.float64),
            b_y=self.b_y.astype(np.float64),
            x_ave=proto.x_ave_,
            permutation=proto.permutation_,
            width=proto.width_,
            height=proto.height_,
            use_uv=self.use_uv,
            use_r=self.use_r,
            subtract_mean=proto.subtract_mean_,
        )


def _sig32(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        np.negative(x, out=x)
        np.exp(x, out=x)
        x += np.float32(1.0)
        np.reciprocal(x, out=x)
    return x


def _init_model(n_x, width, height, config: TrainConfig, rng, x_ave, b_y_raster, perm):
    use_uv, use_r = VARIANTS[config.variant]
    n_h = config.n_hidden
    a_u = 1.0 / np.sqrt(n_x)
    a_v = 1.0 / np.sqrt(max(n_h, 1))
    U = rng.uniform(-a_u, a_u, size=(n_h, n_x))
    V = rng.uniform(-a_v, a_v, size=(n_x, n_h))
    R = rng.uniform(-a_u, a_u, size=(n_x, n_x))
    if config.permutation_strategy == "per_iteration_random":
        np.fill_diagonal(R, 0.0)  # diagonal is unreadable under any order
    else:
        R = np.tril(R, -1)  # entries at or above the sweep diagonal are never read
    if not use_uv:
        U[:] = 0.0
        V[:] = 0.0
    if not use_r:
        R[:] = 0.0
    model = SequentialPixelModel.from_arrays(
        U=U,
        V=V,
        R=R,
        b_h=np.zeros(n_h),
        b_y=b_y_raster[perm],
        x_ave=x_ave,
        permutation=perm,
        width=width,
        height=height,
        use_uv=use_uv,
        use_r=use_r,
        subtract_mean=config.subtract_mean,
    )
    return model


def _snapshot(model: SequentialPixelModel) -> SequentialPixelModel:
    """Deep copy with the never-read half of R forced to zero, so the
    vectorized and incremental paths agree regardless of how R was
    trained."""
    snap = SequentialPixelModel.from_arrays(
        U=model.U_,
        V=model.V_,
        R=np.tril(model.R_, -1) if model.use_r_ else model.R_,
        b_h=model.b_h_,
        b_y=model.b_y_,
        x_ave=model.x_ave_,
        permutation=model.permutation_,
        width=model.width_,
        height=model.height_,
        use_uv=model.use_uv_,
        use_r=model.use_r_,
        subtract_mean=model.subtract_mean_,
    )
    return snap


def _check_finite(model):
    arrays = [model.b_y_, model.b_h_]
    if model.use_uv_:
        arrays += [model.U_, model.V_]
    if model.use_r_:
        arrays.append(model.R_)
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NonFiniteGradient("parameters became non-finite during training")


def fit_sequential_model(train_pixels, *, width, height, config: TrainConfig):
    """SGD over single images with early stopping on a held-out slice.

    The trailing ``validation_fraction`` of ``train_pixels`` is reserved
    for validation; SGD samples uniformly from the rest. Returns
    ``(model, report)`` where the model is the snapshot with the best
    validation code length.
    """
    train_pixels = np.asarray(train_pixels, dtype=np.uint8)
    n_images, n_x = train_pixels.shape
    if n_images == 0:
        raise EmptySet("training requires at least one image")
    if n_x != width * height:
        raise SizeMismatch(f"{n_x} pixels but width*height={width * height}")

    rng = as_rng(config.seed)
    n_val = int(round(n_images * config.validation_fraction))
    n_val = min(max(n_val, 0), n_images - 1)
    sgd_pixels = train_pixels[: n_images - n_val]
    val_pixels = train_pixels[n_images - n_val :]

    x_ave = train_pixels.mean(axis=0, dtype=np.float64)
    b_y_raster = logit(np.clip(x_ave, _BY_INIT_CLAMP, 1.0 - _BY_INIT_CLAMP))

    if config.permutation_strategy == "fixed_random":
        perm = rng.permutation(n_x).astype(np.int64)
    else:
        perm = np.arange(n_x, dtype=np.int64)

    model = _init_model(n_x, width, height, config, rng, x_ave, b_y_raster, perm)
    t0 = config.t0 if config.t0 is not None else 10.0 * max(len(sgd_pixels), 1)
    per_iteration = config.permutation_strategy == "per_iteration_random"
    # fixed orders run on the fused float32 kernel; the per-iteration
    # strategy regathers parameters every step and the recompute mode is
    # only implemented by the reference path
    use_reference = per_iteration or config.hidden_mode == "recompute"
    fast = None if use_reference else _FastTrainer(model, clamp=model.clamp)

    report = TrainReport()
    val_images = val_pixels.reshape(-1, height, width)
    window_bits: list[float] = []
    evals_since_best = 0

    def snapshot():
        if fast is not None:
            if not fast.finite():
                raise NonFiniteGradient("parameters became non-finite during training")
            return fast.export()
        _check_finite(model)
        return _snapshot(model)

    best = snapshot()

    def run_eval(iteration):
        nonlocal best, evals_since_best
        snap = snapshot()
        val_bits = snap.mean_bits(val_images) if n_val else float("nan")
        train_bits = float(np.mean(window_bits)) if window_bits else float("nan")
        window_bits.clear()
        report.curve.append(EvalPoint(iteration, train_bits, val_bits))
        improved = n_val and val_bits < report.best_val_bits
        if improved or not n_val:
            report.best_val_bits = val_bits if n_val else float("nan")
            report.best_iteration = iteration
            best = snap
            evals_since_best = 0
        else:
            evals_since_best += 1
        return bool(n_val) and evals_since_best >= config.patience

    step_perm = None
    for t in range(config.max_iterations):
        idx = int(rng.integers(0, len(sgd_pixels)))
        eta = config.eta0 / (1.0 + t / t0)
        if fast is not None:
            bits = fast.step(sgd_pixels[idx], eta, config.l2_lambda, config.l2_on_biases)
            if not np.isfinite(bits):
                raise NonFiniteGradient(f"forward pass produced non-finite loss ({bits})")
        else:
            if per_iteration:
                step_perm = rng.permutation(n_x)
            bits = train_step(
                model,
                sgd_pixels[idx],
                step_perm,
                eta=eta,
                l2_lambda=config.l2_lambda,
                hidden_mode=config.hidden_mode,
                l2_on_biases=config.l2_on_biases,
            )
        window_bits.append(bits)
        report.iterations_run = t + 1
        if (t + 1) % config.eval_every == 0:
            if run_eval(t + 1):
                break

    if config.max_iterations == 0:
        report.best_iteration = 0
    elif report.iterations_run % config.eval_every != 0:
        run_eval(report.iterations_run)
    return best, report
