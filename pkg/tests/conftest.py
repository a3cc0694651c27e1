"""Shared fixtures: synthetic corpora, tiny seeded models, real-data gates."""

import os
from pathlib import Path

import numpy as np
import pytest

from seqpix.datasets import load_mnist, load_usps, synthetic_digits
from seqpix.model import SequentialPixelModel

REPO_ROOT = Path(__file__).resolve().parent.parent


def resolve_data_dir() -> Path:
    return Path(os.environ.get("SEQPIX_DATA_DIR", REPO_ROOT / "data"))


def make_model(n_x=12, n_h=3, width=4, height=3, seed=0, scale=0.5,
               use_uv=True, use_r=True, subtract_mean=True, permutation=None, **params):
    """Small random model with a valid strictly-lower R and random pixel order."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_x) if permutation is None else np.asarray(permutation)
    return SequentialPixelModel.from_arrays(
        U=rng.normal(0.0, scale, (n_h, n_x)),
        V=rng.normal(0.0, scale, (n_x, n_h)),
        R=np.tril(rng.normal(0.0, scale, (n_x, n_x)), -1),
        b_h=rng.normal(0.0, scale / 2, n_h),
        b_y=rng.normal(0.0, scale / 2, n_x),
        x_ave=rng.uniform(0.1, 0.9, n_x),
        permutation=perm,
        width=width,
        height=height,
        use_uv=use_uv,
        use_r=use_r,
        subtract_mean=subtract_mean,
        **params,
    )


@pytest.fixture
def model_factory():
    return make_model


def split_synthetic(n_train=400, n_test=120, **kwargs):
    """One synthetic corpus split in two, so both halves share prototypes."""
    from seqpix.datasets import ImageSet

    pool = synthetic_digits(n_train + n_test, **kwargs)
    train = ImageSet(pool.pixels[:n_train], pool.labels[:n_train], pool.width, pool.height)
    test = ImageSet(pool.pixels[n_train:], pool.labels[n_train:], pool.width, pool.height)
    return train, test


@pytest.fixture(scope="session")
def synth_split():
    return split_synthetic(400, 120, width=12, height=12, n_classes=4, seed=3)


@pytest.fixture(scope="session")
def synth_train(synth_split):
    return synth_split[0]


@pytest.fixture(scope="session")
def synth_test(synth_split):
    return synth_split[1]


@pytest.fixture(scope="session")
def mnist():
    try:
        return load_mnist(resolve_data_dir())
    except FileNotFoundError:
        pytest.skip("MNIST IDX files not found under the data directory")


@pytest.fixture(scope="session")
def usps():
    try:
        return load_usps(resolve_data_dir())
    except FileNotFoundError:
        pytest.skip(
            "USPS text file not found under the data directory "
            "(place usps.txt / usps_train.txt+usps_test.txt in data/usps/)"
        )
