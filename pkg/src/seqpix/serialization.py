"""On-disk model formats.

All coders share one envelope style: an ASCII magic tag, a little-endian
u32 version, geometry, then raw little-endian arrays. The autoregressive
model's layout (tag SPPM) is:

    SPPM | version u32 | flags u32 | n_x u32 | n_h u32 | width u32 |
    height u32 | permutation n_x*u32 | x_ave n_x*f64 | b_h n_h*f64 |
    b_y n_x*f64 | U (n_h x n_x) f64 | V (n_x x n_h) f64 | R (n_x x n_x) f64

with flag bits 0/1/2 = hidden path on / direct path on / mean
subtraction on, every array row-major. Unknown versions are rejected.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .baselines import (
    CONTEXT_TEMPLATE,
    ConstantProbability,
    ContextModel,
    N_CONTEXTS,
    NearestCenterCoder,
    PixelwiseProbability,
)
from .exceptions import BadModelFile
from .model import SequentialPixelModel

VERSION = 1

TAG_MODEL = b"SPPM"
TAG_CONSTANT = b"CNSTP"
TAG_PIXELWISE = b"PIXP"
TAG_CENTERS = b"CENTR"
TAG_CONTEXT = b"CTX10"

_FLAG_UV = 1
_FLAG_R = 2
_FLAG_MEAN = 4


class _Reader:
    def __init__(self, data: bytes, offset: int):
        self._data = data
        self._pos = offset

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise BadModelFile(f"file truncated at byte {self._pos} (+{n})")
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def array(self, dtype, shape) -> np.ndarray:
        count = int(np.prod(shape))
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()

    def done(self):
        if self._pos != len(self._data):
            raise BadModelFile(f"{len(self._data) - self._pos} trailing bytes")


def _check_version(reader: _Reader):
    version = reader.u32()
    if version != VERSION:
        raise BadModelFile(f"unsupported format version {version}")


def serialize_model(model) -> bytes:
    """Model object -> bytes, dispatching on its type."""
    if isinstance(model, SequentialPixelModel):
        return _ser_sppm(model)
    if isinstance(model, ConstantProbability):
        return TAG_CONSTANT + struct.pack(
            "<IIIdd", VERSION, model.width_, model.height_, model.epsilon, model.p_
        )
    if isinstance(model, PixelwiseProbability):
        head = TAG_PIXELWISE + struct.pack("<IIId", VERSION, model.width_, model.height_, model.epsilon)
        return head + model.p_.astype("<f8").tobytes()
    if isinstance(model, NearestCenterCoder):
        head = TAG_CENTERS + struct.pack(
            "<IIIId", VERSION, model.width_, model.height_, model.centers_.shape[0], model.epsilon
        )
        return head + model.centers_.astype(np.uint8).tobytes() + model.mismatch_.astype("<f8").tobytes()
    if isinstance(model, ContextModel):
        template = b"".join(struct.pack("<bb", dy, dx) for dy, dx in CONTEXT_TEMPLATE)
        head = TAG_CONTEXT + struct.pack("<IIId", VERSION, model.width_, model.height_, model.epsilon)
        return head + template + model.table_.astype("<f8").tobytes()
    raise TypeError(f"cannot serialize {type(model).__name__}")


def _ser_sppm(model: SequentialPixelModel) -> bytes:
    n_x = model.n_pixels_
    n_h = model.U_.shape[0]
    flags = (
        (_FLAG_UV if model.use_uv_ else 0)
        | (_FLAG_R if model.use_r_ else 0)
        | (_FLAG_MEAN if model.subtract_mean_ else 0)
    )
    parts = [
        TAG_MODEL,
        struct.pack("<IIIIII", VERSION, flags, n_x, n_h, model.width_, model.height_),
        model.permutation_.astype("<u4").tobytes(),
        model.x_ave_.astype("<f8").tobytes(),
        model.b_h_.astype("<f8").tobytes(),
        model.b_y_.astype("<f8").tobytes(),
        np.ascontiguousarray(model.U_, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.V_, dtype="<f8").tobytes(),
        np.ascontiguousarray(model.R_, dtype="<f8").tobytes(),
    ]
    return b"".join(parts)


def deserialize_model(data: bytes):
    """Bytes -> model object, sniffing the magic tag."""
    if data[:4] == TAG_MODEL:
        return _de_sppm(_Reader(data, 4))
    if data[:4] == TAG_PIXELWISE:
        return _de_pixelwise(_Reader(data, 4))
    if data[:5] == TAG_CONSTANT:
        return _de_constant(_Reader(data, 5))
    if data[:5] == TAG_CENTERS:
        return _de_centers(_Reader(data, 5))
    if data[:5] == TAG_CONTEXT:
        return _de_context(_Reader(data, 5))
    raise BadModelFile(f"unrecognized magic {data[:5]!r}")


def _de_sppm(r: _Reader) -> SequentialPixelModel:
    _check_version(r)
    flags, n_x, n_h, width, height = (r.u32() for _ in range(5))
    if n_x != width * height:
        raise BadModelFile(f"n_x {n_x} does not match {width}x{height}")
    perm = r.array("<u4", (n_x,)).astype(np.int64)
    x_ave = r.array("<f8", (n_x,))
    b_h = r.array("<f8", (n_h,))
    b_y = r.array("<f8", (n_x,))
    U = r.array("<f8", (n_h, n_x))
    V = r.array("<f8", (n_x, n_h))
    R = r.array("<f8", (n_x, n_x))
    r.done()
    try:
        return SequentialPixelModel.from_arrays(
            U=U, V=V, R=R, b_h=b_h, b_y=b_y, x_ave=x_ave, permutation=perm,
            width=width, height=height,
            use_uv=bool(flags & _FLAG_UV), use_r=bool(flags & _FLAG_R),
            subtract_mean=bool(flags & _FLAG_MEAN),
        )
    except ValueError as exc:
        raise BadModelFile(str(exc)) from exc


def _de_constant(r: _Reader) -> ConstantProbability:
    _check_version(r)
    width, height = r.u32(), r.u32()
    epsilon, p = r.f64(), r.f64()
    r.done()
    model = ConstantProbability(epsilon=epsilon)
    model.p_, model.width_, model.height_ = p, width, height
    return model


def _de_pixelwise(r: _Reader) -> PixelwiseProbability:
    _check_version(r)
    width, height = r.u32(), r.u32()
    epsilon = r.f64()
    p = r.array("<f8", (width * height,))
    r.done()
    model = PixelwiseProbability(epsilon=epsilon)
    model.p_, model.width_, model.height_ = p, width, height
    return model


def _de_centers(r: _Reader) -> NearestCenterCoder:
    _check_version(r)
    width, height, n_centers = r.u32(), r.u32(), r.u32()
    epsilon = r.f64()
    n_x = width * height
    centers = r.array(np.uint8, (n_centers, n_x))
    mismatch = r.array("<f8", (n_centers, n_x))
    r.done()
    model = NearestCenterCoder(n_centers=n_centers, epsilon=epsilon)
    model.centers_, model.mismatch_ = centers, mismatch
    model.assigned_counts_ = None
    model.width_, model.height_ = width, height
    return model


def _de_context(r: _Reader) -> ContextModel:
    _check_version(r)
    width, height = r.u32(), r.u32()
    epsilon = r.f64()
    template = tuple(struct.unpack("<bb", r.take(2)) for _ in range(len(CONTEXT_TEMPLATE)))
    if template != CONTEXT_TEMPLATE:
        raise BadModelFile("context template differs from this build's template")
    table = r.array("<f8", (N_CONTEXTS,))
    r.done()
    model = ContextModel(epsilon=epsilon)
    model.table_ = table
    model.context_counts_ = None
    model.width_, model.height_ = width, height
    return model


def model_tag(model) -> bytes:
    for cls, tag in (
        (SequentialPixelModel, TAG_MODEL),
        (ConstantProbability, TAG_CONSTANT),
        (PixelwiseProbability, TAG_PIXELWISE),
        (NearestCenterCoder, TAG_CENTERS),
        (ContextModel, TAG_CONTEXT),
    ):
        if isinstance(model, cls):
            return tag
    raise TypeError(f"no tag for {type(model).__name__}")


def model_hash(model) -> bytes:
    """64-bit identity of the fitted parameters."""
    return hashlib.blake2b(serialize_model(model), digest_size=8).digest()


def save_model(model, path) -> Path:
    path = Path(path)
    path.write_bytes(serialize_model(model))
    return path


def load_model(path):
    data = Path(path).read_bytes()
    return deserialize_model(data)
