import os
import sys

import numpy as np
import pytest

# Make the repository root importable so tests can use `src.` imports
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.core.data_handler import DataHandler  # noqa: E402
from src.core.diagnostics import tiny_backbone_config  # noqa: E402
from src.core.synthetic import SyntheticSpec, generate_synthetic  # noqa: E402
from src.core.trainer import TrainConfig  # noqa: E402
from src.losses.uncertainty import LossWeights  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long training runs; deselect with -m \"not slow\"")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_backbone():
    return tiny_backbone_config()


def make_tiny_train_config(**overrides):
    values = dict(
        backbone=tiny_backbone_config(),
        weights=LossWeights(),
        fusion_dim=8,
        cam_dim=4,
        gate_reduction=4,
        lr=1e-3,
        epochs=2,
        P=2,
        K=2,
        batch_size=4,
        seed=0,
        dtype="float64",
    )
    values.update(overrides)
    return TrainConfig(**values)


@pytest.fixture
def tiny_train_config():
    return make_tiny_train_config()


TINY_SPEC = dict(num_ids=3, cams=2, images_per_id_per_cam=4, image_size=32, noise=0.01, seed=5)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """3 ids x 2 cameras x 4 images at 32x32; returns the manifest path."""
    out = tmp_path_factory.mktemp("synthetic")
    generate_synthetic(SyntheticSpec(**TINY_SPEC), out)
    return out / "manifest.csv"


@pytest.fixture
def tiny_handler(tiny_dataset):
    handler = DataHandler()
    handler.load_manifest(tiny_dataset)
    return handler


@pytest.fixture(scope="session")
def make_config():
    return make_tiny_train_config


TINY_RUN = """\
# tiny run for tests
profile = desk
backbone.image_size = 32
backbone.embed_dims = 4, 8, 12, 16
backbone.depths = 1,1,1,1
backbone.num_heads = 1,2,2,4
backbone.sr_ratios = 4,2,1,1
backbone.mlp_ratio = 2.0
model.fusion_dim = 8
model.cam_dim = 4
model.gate_reduction = 4
train.epochs = 2
train.P = 2
train.K = 2
train.batch_size = 4
train.dtype = float64   # double precision
optimizer.lr = 0.001
"""


@pytest.fixture
def tiny_run_file(tmp_path):
    """Flat run config equivalent to ``make_tiny_train_config()``."""
    path = tmp_path / "run.cfg"
    path.write_text(TINY_RUN)
    return path
