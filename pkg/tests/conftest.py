import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from advforge.data import find_mnist_file, load_mnist, resolve_mnist_dir
from advforge.models import ModelConfig, Discriminator, build_classifier

REPO = Path(__file__).resolve().parent.parent


def mnist_dir():
    for candidate in (resolve_mnist_dir(None), REPO / "data" / "mnist"):
        if find_mnist_file(Path(candidate), "test", "images") is not None:
            return Path(candidate)
    return None


def require_mnist():
    d = mnist_dir()
    if d is None:
        pytest.skip(
            "MNIST IDX files not found: place train/t10k ubyte(.gz) files under "
            "./data/mnist or set ADVFORGE_DATA_DIR"
        )
    return d


@pytest.fixture(scope="session")
def mnist_test():
    return load_mnist(require_mnist(), "test")


@pytest.fixture(scope="session")
def mnist_train():
    return load_mnist(require_mnist(), "train")


@pytest.fixture
def tiny_cnn():
    """Small synthetic-shaped classifier for fast tests."""
    cfg = ModelConfig(arch="small_cnn", in_shape=(1, 8, 8), classes=3, widths=(4, 6, 8), seed=11)
    return build_classifier(cfg)


@pytest.fixture
def lenet():
    return build_classifier(ModelConfig(arch="lenet", in_shape=(1, 28, 28), classes=10, seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
