import numpy as np
import pytest
import torch

from terrainsr import ModelConfig, SynthConfig, gen_dataset
from terrainsr.training import init_params

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_config():
    return ModelConfig(base_channels=4, feedback_steps=2, residual_units=4)


@pytest.fixture
def tiny_model(tiny_config):
    return init_params(tiny_config, seed=0)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Ten 64x64 synthetic triples with a 6/2/2 split, shared across tests."""
    out = tmp_path_factory.mktemp("synth")
    cfg = SynthConfig(seed=7, size=64, octaves=5, base_amplitude=80.0)
    return gen_dataset(10, cfg, out)
