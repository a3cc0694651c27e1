"""Whole-dataset compression, decompression, and the benchmark table.

A container holds one arithmetic-coded payload per image so that
per-image bit counts are measurable and records decode independently.
The analytic column of the benchmark reports ideal code lengths (what
the published comparisons use); the actual column adds the coder's
termination overhead and, for the center coder, the raw index bits.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coder import ArithmeticDecoder, ArithmeticEncoder, CodeBuffer, quantize_prob
from .exceptions import CorruptRecord, HashMismatch, ShapeMismatch
from .serialization import TAG_CENTERS, model_hash, model_tag
from .validation import check_binary_images

CONTAINER_MAGIC = b"SPPC"
CONTAINER_VERSION = 1


@dataclass
class Record:
    side: int | None
    bit_count: int
    payload: bytes

    @property
    def buffer(self) -> CodeBuffer:
        return CodeBuffer(self.payload, self.bit_count)


@dataclass
class CodecContainer:
    tag: bytes
    model_hash: bytes
    width: int
    height: int
    records: list[Record] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def has_side(self) -> bool:
        return self.tag == TAG_CENTERS

    def payload_bits(self) -> np.ndarray:
        """Arithmetic-coded bits per image (side-index bits excluded; the
        center coder charges ceil(log2 n_centers) on top, which only the
        model knows)."""
        return np.array([r.bit_count for r in self.records], dtype=np.float64)

    def to_bytes(self) -> bytes:
        parts = [
            CONTAINER_MAGIC,
            struct.pack("<IB", CONTAINER_VERSION, len(self.tag)),
            self.tag,
            self.model_hash,
            struct.pack("<IIIB", len(self.records), self.width, self.height, int(self.has_side)),
        ]
        for rec in self.records:
            if self.has_side:
                parts.append(struct.pack("<I", rec.side))
            parts.append(struct.pack("<II", rec.bit_count, len(rec.payload)))
            parts.append(rec.payload)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CodecContainer":
        r = _Cursor(data)
        if r.take(4) != CONTAINER_MAGIC:
            raise CorruptRecord("not a container file")
        version, tag_len = struct.unpack("<IB", r.take(5))
        if version != CONTAINER_VERSION:
            raise CorruptRecord(f"unsupported container version {version}")
        tag = r.take(tag_len)
        digest = r.take(8)
        count, width, height, has_side = struct.unpack("<IIIB", r.take(13))
        records = []
        for _ in range(count):
            side = struct.unpack("<I", r.take(4))[0] if has_side else None
            bit_count, n_payload = struct.unpack("<II", r.take(8))
            records.append(Record(side, bit_count, r.take(n_payload)))
        return cls(tag=tag, model_hash=digest, width=width, height=height, records=records)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path) -> "CodecContainer":
        return cls.from_bytes(Path(path).read_bytes())


class _Cursor:
    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise CorruptRecord(f"container truncated at byte {self._pos} (+{n})")
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out


def compress_image(model, image_flat) -> Record:
    """Arithmetic-code one raster image under the model's probabilities."""
    side = model.encode_side(image_flat)
    bits = model.stream_bits(image_flat, side)
    cursor = model.begin_stream(side)
    enc = ArithmeticEncoder()
    for bit in bits.tolist():
        q = quantize_prob(cursor.next_p())
        enc.encode_bit(bit, q)
        cursor.push(bit)
    buf = enc.finish()
    return Record(side=side, bit_count=buf.bit_count, payload=buf.payload)


def decompress_image(model, record: Record) -> np.ndarray:
    """Exact inverse of :func:`compress_image`; returns raster pixels."""
    cursor = model.begin_stream(record.side)
    dec = ArithmeticDecoder(record.buffer)
    for _ in range(model.n_pixels_):
        bit = dec.decode_bit(quantize_prob(cursor.next_p()))
        cursor.push(bit)
    return cursor.image()


def compress_dataset(model, X) -> CodecContainer:
    """Compress every image; records keep input order."""
    flat, (h, w) = check_binary_images(X, shape=(model.height_, model.width_), allow_empty=True)
    container = CodecContainer(
        tag=model_tag(model), model_hash=model_hash(model), width=w, height=h
    )
    for row in flat:
        container.records.append(compress_image(model, row))
    return container


def decompress_dataset(container: CodecContainer, model) -> np.ndarray:
    """Recover the original images; the model identity must match."""
    if model_tag(model) != container.tag:
        raise HashMismatch(
            f"container was coded with {container.tag!r}, got {model_tag(model)!r}"
        )
    if model_hash(model) != container.model_hash:
        raise HashMismatch("model hash differs from the one used to compress")
    if (container.height, container.width) != (model.height_, model.width_):
        raise ShapeMismatch("container geometry does not match the model")
    out = np.empty((len(container), model.n_pixels_), dtype=np.uint8)
    for i, rec in enumerate(container.records):
        out[i] = decompress_image(model, rec)
    return out.reshape(len(container), container.height, container.width)


# ---------------------------------------------------------------------------
# benchmark harness


@dataclass
class BenchRow:
    method: str
    dataset: str
    analytic_bits: float
    actual_bits: float | None
    n_images: int
    n_coded: int
    note: str = ""


@dataclass
class BenchmarkReport:
    rows: list[BenchRow] = field(default_factory=list)

    def to_text(self) -> str:
        header = f"{'method':<22} {'dataset':<8} {'analytic':>10} {'actual':>10} {'images':>7} {'coded':>6}  note"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            actual = f"{r.actual_bits:10.1f}" if r.actual_bits is not None else f"{'-':>10}"
            lines.append(
                f"{r.method:<22} {r.dataset:<8} {r.analytic_bits:10.1f} {actual} "
                f"{r.n_images:7d} {r.n_coded:6d}  {r.note}"
            )
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = ["method,dataset,analytic_bits,actual_bits,n_images,n_coded,note"]
        for r in self.rows:
            actual = "" if r.actual_bits is None else f"{r.actual_bits:.4f}"
            lines.append(
                f"{r.method},{r.dataset},{r.analytic_bits:.4f},{actual},{r.n_images},{r.n_coded},{r.note}"
            )
        return "\n".join(lines)

    def row(self, method: str, dataset: str | None = None) -> BenchRow:
        for r in self.rows:
            if r.method == method and (dataset is None or r.dataset == dataset):
                return r
        raise KeyError(method)


def bench_model(model, test_images, *, method, dataset, code_limit=None) -> BenchRow:
    """Analytic bits over the whole split, coded bits over a prefix."""
    analytic = model.bits_per_image(test_images)
    n = test_images.shape[0]
    n_coded = n if code_limit is None else min(code_limit, n)
    actual = None
    if n_coded:
        subset = test_images[:n_coded]
        container = compress_dataset(model, subset)
        stored = container.payload_bits()
        if container.has_side:
            stored = stored + model.index_bits_raw_
        recovered = decompress_dataset(container, model)
        if not np.array_equal(recovered, subset.reshape(recovered.shape)):
            raise CorruptRecord(f"{method}: round trip failed")
        actual = float(np.mean(stored))
    return BenchRow(
        method=method,
        dataset=dataset,
        analytic_bits=float(np.mean(analytic)),
        actual_bits=actual,
        n_images=n,
        n_coded=n_coded,
    )


DEFAULT_METHODS = ("original", "constant", "pixelwise", "centers", "context",
                   "r_only", "uv_only", "full")
EPSILON_GRID = (0.2, 0.1, 0.05, 0.02, 0.01, 0.005)


def default_centers_grid(n_train: int) -> tuple[int, ...]:
    grid = (250, 500, 1000, 2000, 4000)
    return tuple(n for n in grid if n <= n_train // 2) or (max(1, n_train // 2),)


def run_table1(
    dataset,
    name: str,
    *,
    methods=DEFAULT_METHODS,
    n_hidden=200,
    code_limit=256,
    centers_grid=None,
    epsilon_grid=EPSILON_GRID,
    model_dir=None,
    train_overrides=None,
    seed=1,
    log=None,
) -> BenchmarkReport:
    """Fit/evaluate every requested coder on one dataset.

    ``dataset`` is a :class:`~seqpix.datasets.DigitDataset`. Neural
    variants are cached in ``model_dir`` as serialized models and reused
    on later runs. ``code_limit`` bounds how many test images go through
    the actual arithmetic coder (the analytic column always covers the
    full split).
    """
    from .baselines import (
        ConstantProbability,
        ContextModel,
        NearestCenterCoder,
        PixelwiseProbability,
        cross_validate_centers,
    )
    from .model import SequentialPixelModel
    from .serialization import load_model, save_model

    log = log or (lambda *_: None)
    train3 = dataset.train.as_images()
    test3 = dataset.test.as_images()
    report = BenchmarkReport()

    def add(model, method, note=""):
        row = bench_model(model, test3, method=method, dataset=name, code_limit=code_limit)
        row.note = note
        report.rows.append(row)
        log(f"[{name}] {method}: analytic {row.analytic_bits:.1f} bits/image {note}")
        return row

    for method in methods:
        if method == "original":
            add(ConstantProbability(p=0.5).fit(train3), method)
        elif method == "constant":
            add(ConstantProbability().fit(train3), method)
        elif method == "pixelwise":
            add(PixelwiseProbability().fit(train3), method)
        elif method == "centers":
            grid = centers_grid or default_centers_grid(len(train3))
            best_n, best_eps, _table = cross_validate_centers(
                train3, grid, epsilon_grid, random_state=seed
            )
            log(f"[{name}] centers: cross-validation picked n={best_n}, eps={best_eps}")
            model = NearestCenterCoder(n_centers=best_n, epsilon=best_eps, random_state=seed).fit(train3)
            add(model, method, note=f"n={best_n} eps={best_eps}")
        elif method == "context":
            add(ContextModel().fit(train3), method)
        elif method in ("r_only", "uv_only", "full"):
            cache = Path(model_dir) / f"{name}_{method}_{n_hidden}.sppm" if model_dir else None
            if cache is not None and cache.exists():
                model = load_model(cache)
                note = "cached"
            else:
                params = dict(n_hidden=n_hidden, variant=method, random_state=seed)
                params.update(train_overrides or {})
                model = SequentialPixelModel(**params)
                log(f"[{name}] {method}: training n_hidden={n_hidden} ...")
                model.fit(train3)
                note = f"iters={model.report_.iterations_run}"
                if cache is not None:
                    save_model(model, cache)
            add(model, method, note=note)
        else:
            raise ValueError(f"unknown benchmark method {method!r}")
    return report
