"""Digit dataset ingestion: IDX and text parsers, binarization, splits.

Images live in memory as flat uint8 rows (one image per row, raster
order) plus a shared (height, width). Grayscale values are 0..255;
binary values are 0/1.
"""

from __future__ import annotations

import gzip
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    BadMagic,
    DimensionOverflow,
    EmptySet,
    InsufficientClassCount,
    LabelOutOfRange,
    MalformedLine,
    TruncatedFile,
    ValueOutOfRange,
)
from .validation import as_rng

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
MNIST_THRESHOLD = 128
USPS_THRESHOLD = 50
USPS_SIDE = 16

_MAX_DIM = 1 << 24
_MAX_PIXELS = 1 << 40


@dataclass
class ImageSet:
    """A stack of equally sized images with labels."""

    pixels: np.ndarray  # (n, height*width) uint8
    labels: np.ndarray  # (n,) int
    width: int
    height: int

    def __len__(self):
        return self.pixels.shape[0]

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    def as_images(self) -> np.ndarray:
        return self.pixels.reshape(len(self), self.height, self.width)


@dataclass
class DigitDataset:
    """Binarized train/test splits plus training statistics."""

    train: ImageSet
    test: ImageSet
    mean_image: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.mean_image is None:
            self.mean_image = mean_image(self.train.pixels)


def _maybe_gunzip(data: bytes) -> bytes:
    if data[:2] == b"\x1f\x8b":
        return gzip.decompress(data)
    return data


def parse_idx_images(data: bytes) -> tuple[np.ndarray, int, int]:
    """Parse an IDX unsigned-byte rank-3 image file.

    Returns ``(pixels, rows, cols)`` with pixels of shape (count, rows*cols).
    Accepts gzip-compressed input transparently.
    """
    data = _maybe_gunzip(data)
    if len(data) < 16:
        raise TruncatedFile(f"IDX image header needs 16 bytes, got {len(data)}")
    magic, count, rows, cols = np.frombuffer(data[:16], dtype=">u4")
    if magic != IDX_IMAGES_MAGIC:
        raise BadMagic(f"expected image magic {IDX_IMAGES_MAGIC}, got {magic}")
    if rows > _MAX_DIM or cols > _MAX_DIM or int(count) * int(rows) * int(cols) > _MAX_PIXELS:
        raise DimensionOverflow(f"implausible dimensions {count}x{rows}x{cols}")
    n_pixels = int(count) * int(rows) * int(cols)
    payload = data[16:]
    if len(payload) < n_pixels:
        raise TruncatedFile(f"need {n_pixels} pixel bytes, got {len(payload)}")
    pixels = np.frombuffer(payload[:n_pixels], dtype=np.uint8).reshape(int(count), int(rows) * int(cols))
    return pixels.copy(), int(rows), int(cols)


def parse_idx_labels(data: bytes) -> np.ndarray:
    """Parse an IDX unsigned-byte rank-1 label file (gzip accepted)."""
    data = _maybe_gunzip(data)
    if len(data) < 8:
        raise TruncatedFile(f"IDX label header needs 8 bytes, got {len(data)}")
    magic, count = np.frombuffer(data[:8], dtype=">u4")
    if magic != IDX_LABELS_MAGIC:
        raise BadMagic(f"expected label magic {IDX_LABELS_MAGIC}, got {magic}")
    payload = data[8:]
    if len(payload) < count:
        raise TruncatedFile(f"need {count} label bytes, got {len(payload)}")
    labels = np.frombuffer(payload[: int(count)], dtype=np.uint8).astype(np.int64)
    if labels.size and labels.max() > 9:
        raise LabelOutOfRange(f"label {labels.max()} outside [0, 9]")
    return labels


def parse_usps_text(text: str) -> tuple[np.ndarray, np.ndarray]:
    """Parse the plain-text digit distribution: one line per image.

    Each nonblank line holds a label followed by 256 pixel values for a
    16x16 image. Values may be stored either as grays in [0, 255] or
    scaled to [-1, 1]; the range is auto-detected per file and [-1, 1]
    input is mapped linearly onto [0, 255].

    Returns ``(pixels, labels)`` with pixels of shape (n, 256) uint8.
    """
    rows = []
    labels = []
    n_values = USPS_SIDE * USPS_SIDE
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 1 + n_values:
            raise MalformedLine(f"line {lineno}: expected 1+{n_values} fields, got {len(tokens)}")
        try:
            values = np.array([float(t) for t in tokens], dtype=np.float64)
        except ValueError as exc:
            raise MalformedLine(f"line {lineno}: non-numeric field ({exc})") from exc
        label = values[0]
        if label != int(label) or not 0 <= label <= 9:
            raise LabelOutOfRange(f"line {lineno}: label {label} outside [0, 9]")
        labels.append(int(label))
        rows.append(values[1:])
    if not rows:
        return np.zeros((0, n_values), dtype=np.uint8), np.zeros(0, dtype=np.int64)
    raw = np.vstack(rows)
    if raw.max() > 1.0:
        # grays; reject anything outside [0, 255]
        if raw.min() < 0.0 or raw.max() > 255.0:
            raise ValueOutOfRange(f"gray values must lie in [0, 255]; saw [{raw.min()}, {raw.max()}]")
        pixels = np.rint(raw)
    else:
        if raw.min() < -1.0 - 1e-9 or raw.max() > 1.0 + 1e-9:
            raise ValueOutOfRange(f"scaled values must lie in [-1, 1]; saw [{raw.min()}, {raw.max()}]")
        pixels = np.rint((raw + 1.0) * 127.5)
    return pixels.astype(np.uint8), np.asarray(labels, dtype=np.int64)


def binarize(pixels: np.ndarray, threshold: int) -> np.ndarray:
    """Threshold grays to bits: strictly above maps to 1, at or below to 0.

    The strict comparison is what reproduces the published digit
    statistics (a value equal to the threshold counts as background).
    """
    if not 0 <= threshold <= 255:
        raise ValueError(f"threshold {threshold} outside [0, 255]")
    return (np.asarray(pixels) > threshold).astype(np.uint8)


def split_per_class(pixels, labels, *, n_train=700, n_test=300, seed=1):
    """Deterministically draw n_train/n_test images per class, disjointly.

    Mirrors the random per-class split used for pooled digit corpora.
    """
    rng = as_rng(seed)
    labels = np.asarray(labels)
    train_idx, test_idx = [], []
    for cls in range(10):
        members = np.flatnonzero(labels == cls)
        if len(members) < n_train + n_test:
            raise InsufficientClassCount(
                f"class {cls} has {len(members)} images, need {n_train + n_test}"
            )
        order = rng.permutation(len(members))
        chosen = members[order]
        train_idx.append(chosen[:n_train])
        test_idx.append(chosen[n_train : n_train + n_test])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)
    return (pixels[train_idx], labels[train_idx]), (pixels[test_idx], labels[test_idx])


def mean_image(train_pixels: np.ndarray) -> np.ndarray:
    """Per-pixel mean of binarized training images (float64 in [0, 1])."""
    train_pixels = np.asarray(train_pixels)
    if train_pixels.shape[0] == 0:
        raise EmptySet("mean image requires at least one training image")
    return train_pixels.mean(axis=0, dtype=np.float64)


def _read_first(paths) -> bytes:
    for p in paths:
        p = Path(p)
        if p.exists():
            return p.read_bytes()
    raise FileNotFoundError(f"none of {', '.join(str(p) for p in paths)} exist")


def load_mnist(data_dir, *, threshold=MNIST_THRESHOLD) -> DigitDataset:
    """Load the official IDX files (optionally .gz) from ``data_dir``.

    Looks in ``data_dir`` and ``data_dir/mnist`` for the canonical
    train/t10k file names.
    """
    data_dir = Path(data_dir)
    sets = {}
    for split, stem in (("train", "train"), ("test", "t10k")):
        candidates = []
        for base in (data_dir, data_dir / "mnist"):
            for suffix in ("", ".gz"):
                candidates.append(base / f"{stem}-images-idx3-ubyte{suffix}")
        images_raw = _read_first(candidates)
        labels_raw = _read_first([Path(str(c).replace("images-idx3", "labels-idx1")) for c in candidates])
        pixels, rows, cols = parse_idx_images(images_raw)
        labels = parse_idx_labels(labels_raw)
        if len(labels) != len(pixels):
            raise TruncatedFile(f"{split}: {len(pixels)} images but {len(labels)} labels")
        sets[split] = ImageSet(binarize(pixels, threshold), labels, width=cols, height=rows)
    return DigitDataset(train=sets["train"], test=sets["test"])


def load_usps(data_dir, *, threshold=USPS_THRESHOLD, seed=1) -> DigitDataset:
    """Load text-format 16x16 digits from ``data_dir``.

    Accepts either a single pooled file (``usps.txt`` / ``usps_all.txt``),
    which is split 700/300 per class with ``seed``, or a pre-split pair
    ``usps_train.txt`` + ``usps_test.txt``.
    """
    data_dir = Path(data_dir)
    roots = [data_dir, data_dir / "usps"]
    pair = None
    for root in roots:
        if (root / "usps_train.txt").exists() and (root / "usps_test.txt").exists():
            pair = (root / "usps_train.txt", root / "usps_test.txt")
            break
    if pair is not None:
        splits = []
        for path in pair:
            pixels, labels = parse_usps_text(path.read_text())
            splits.append((binarize(pixels, threshold), labels))
        (trx, trl), (tex, tel) = splits
    else:
        pool = _read_first([root / name for root in roots for name in ("usps.txt", "usps_all.txt")])
        pixels, labels = parse_usps_text(pool.decode())
        (trx, trl), (tex, tel) = split_per_class(binarize(pixels, threshold), labels, seed=seed)
    train = ImageSet(trx, trl, width=USPS_SIDE, height=USPS_SIDE)
    test = ImageSet(tex, tel, width=USPS_SIDE, height=USPS_SIDE)
    return DigitDataset(train=train, test=test)


def load_dataset(name: str, data_dir, *, seed=1) -> DigitDataset:
    """Dispatch on dataset name ('mnist' or 'usps')."""
    name = name.lower()
    if name == "mnist":
        return load_mnist(data_dir)
    if name == "usps":
        return load_usps(data_dir, seed=seed)
    raise ValueError(f"unknown dataset {name!r} (expected 'mnist' or 'usps')")


def synthetic_digits(
    n_images: int,
    *,
    width=16,
    height=16,
    n_classes=4,
    flip=0.04,
    seed=0,
) -> ImageSet:
    """Structured binary images for tests: class prototypes plus pixel noise.

    Prototypes are thresholded smoothed noise fields, so images carry both
    global class structure (good for center coding) and local spatial
    correlation (good for context/autoregressive models). Deterministic
    given the seed.
    """
    rng = as_rng(seed)
    n_pix = width * height
    protos = np.empty((n_classes, n_pix), dtype=np.uint8)
    for c in range(n_classes):
        field_ = rng.normal(size=(height + 6, width + 6))
        # separable box blur, two passes
        for _ in range(2):
            field_ = (
                field_
                + np.roll(field_, 1, axis=0)
                + np.roll(field_, -1, axis=0)
                + np.roll(field_, 1, axis=1)
                + np.roll(field_, -1, axis=1)
            ) / 5.0
        crop = field_[3 : 3 + height, 3 : 3 + width]
        protos[c] = (crop > np.median(crop)).astype(np.uint8).ravel()
    labels = rng.integers(0, n_classes, size=n_images)
    noise = (rng.random((n_images, n_pix)) < flip).astype(np.uint8)
    pixels = protos[labels] ^ noise
    return ImageSet(pixels, labels.astype(np.int64), width=width, height=height)
