"""Lossless binary-image compression via sequential pixel prediction.

An autoregressive model predicts each pixel from the already-seen ones
through a hidden layer and a direct linear path; exact per-pixel
probabilities drive an integer binary arithmetic coder. Classic
baseline coders (constant, per-pixel, nearest-center difference,
causal-context table) share the same estimator and streaming interfaces.
"""

from .baselines import (
    ConstantProbability,
    ContextModel,
    NearestCenterCoder,
    PixelwiseProbability,
    cross_validate_centers,
)
from .codec import (
    BenchmarkReport,
    CodecContainer,
    compress_dataset,
    decompress_dataset,
    run_table1,
)
from .coder import (
    ArithmeticDecoder,
    ArithmeticEncoder,
    CodeBuffer,
    decode_bits,
    encode_bits,
    ideal_bits,
    quantize_prob,
)
from .datasets import (
    DigitDataset,
    ImageSet,
    binarize,
    load_dataset,
    load_mnist,
    load_usps,
    mean_image,
    parse_idx_images,
    parse_idx_labels,
    parse_usps_text,
    split_per_class,
    synthetic_digits,
)
from .model import PredictionTrace, SequentialPixelModel, SweepState
from .serialization import load_model, model_hash, save_model, serialize_model
from .training import TrainConfig, TrainReport, fit_sequential_model, sweep_gradients, train_step

__version__ = "0.1.0"

__all__ = [
    "ArithmeticDecoder",
    "ArithmeticEncoder",
    "BenchmarkReport",
    "CodeBuffer",
    "CodecContainer",
    "ConstantProbability",
    "ContextModel",
    "DigitDataset",
    "ImageSet",
    "NearestCenterCoder",
    "PixelwiseProbability",
    "PredictionTrace",
    "SequentialPixelModel",
    "SweepState",
    "TrainConfig",
    "TrainReport",
    "binarize",
    "compress_dataset",
    "cross_validate_centers",
    "decode_bits",
    "decompress_dataset",
    "encode_bits",
    "fit_sequential_model",
    "ideal_bits",
    "load_dataset",
    "load_mnist",
    "load_model",
    "load_usps",
    "mean_image",
    "model_hash",
    "parse_idx_images",
    "parse_idx_labels",
    "parse_usps_text",
    "quantize_prob",
    "run_table1",
    "save_model",
    "serialize_model",
    "split_per_class",
    "sweep_gradients",
    "synthetic_digits",
    "train_step",
]
