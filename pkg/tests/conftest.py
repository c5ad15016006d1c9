import os
from pathlib import Path

import numpy as np
import pytest

from src.data_io.datasets import Dataset
from src.drcn_engine.config import TrainConfig
from src.drcn_engine.model import build_model
from src.nn_layers.specs import NetworkSpec
from src.noise_augment.corruption import NoiseConfig
from src.tensor_core.rng import Rng


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run long experiments")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


# 12 -> conv5 8 -> pool 4 -> conv3 2 -> pool 1 -> conv1 1
TOY_SPEC = NetworkSpec(
    input_shape=(1, 12, 12),
    num_classes=3,
    conv_channels=(2, 3, 4),
    kernel_sizes=(5, 3, 1),
    pool_after=(True, True, False),
    fc_width=6,
)


@pytest.fixture
def toy_spec():
    return TOY_SPEC


@pytest.fixture
def quiet_cfg():
    """Small batches, no corruption, no dropout"""
    return TrainConfig(
        batch_source=8, batch_target=8, p_keep=1.0, noise=NoiseConfig.disabled(),
        max_epochs=3, stop_window=5, val_fraction=0.0,
    )


@pytest.fixture
def toy_model(quiet_cfg):
    def make(with_decoder=True, cfg=None):
        cfg = cfg or quiet_cfg
        return build_model(TOY_SPEC.input_shape, TOY_SPEC.num_classes, cfg, spec=TOY_SPEC, with_decoder=with_decoder)
    return make


@pytest.fixture
def toy_dataset():
    def make(n=24, seed=0):
        rng = Rng(seed).substream("fixture")
        images = rng.random((n, 1, 12, 12))
        labels = np.arange(n, dtype=np.int64) % TOY_SPEC.num_classes
        return Dataset(images=images, labels=labels, provenance=("fixture",), num_classes=TOY_SPEC.num_classes)
    return make


def real_data_dir() -> Path:
    return Path(os.getenv("DRCN_DATA_DIR", "data"))


requires_digits = pytest.mark.skipif(
    not (real_data_dir() / "mnist" / "train-images-idx3-ubyte").is_file()
    or not (real_data_dir() / "usps" / "usps_train.bin").is_file(),
    reason="MNIST/USPS files not found under DRCN_DATA_DIR",
)
