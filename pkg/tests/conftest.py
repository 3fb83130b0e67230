import numpy as np
import pytest

from spikeprune.config import parse_config
from spikeprune.data import synth_dataset
from spikeprune.model import build_model


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_config():
    """The workbench default toy configuration."""
    return parse_config({})


@pytest.fixture(scope="session")
def tiny_data():
    """A small synthetic dataset shared by fast tests."""
    return synth_dataset(classes=4, patches=16, d_in=32, T=4,
                         n_train=96, n_test=48, r_high=0.5, r_low=0.15, seed=7)


@pytest.fixture
def tiny_model():
    """A small untrained model matching tiny_data geometry."""
    return build_model("Spikformer-2-16-32", d_in=32, num_classes=4, T=4,
                       heads=4, seed=3, init_gain=3.5, surrogate_width=2.0)
