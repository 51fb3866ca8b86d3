from pathlib import Path

import numpy as np
import pytest

from binq import build_toy_net, transform_network

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

FIXTURE_MODEL = FIXTURES / "toynet_digits.zbnn"
FIXTURE_TEST_IMAGES = FIXTURES / "digits-test-images-idx3-ubyte.gz"
FIXTURE_TEST_LABELS = FIXTURES / "digits-test-labels-idx1-ubyte.gz"


@pytest.fixture(scope="session")
def toy_float():
    return build_toy_net(seed=11)


@pytest.fixture(scope="session")
def toy_zobnn(toy_float):
    net, _ = transform_network(toy_float, 16)
    return net


def grid_inputs(rng, cfg, shape, span=2000):
    """Random real inputs that are exactly representable on the delta grid."""
    k = rng.integers(-span, span + 1, size=shape)
    return k.astype(np.float64) * cfg.delta


def pixel_inputs(rng, n, hw=28):
    return rng.integers(0, 256, size=(n, 1, hw, hw))
