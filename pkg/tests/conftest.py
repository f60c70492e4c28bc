import os

import numpy as np
import pytest
from hypothesis import settings

# HYPOTHESIS_PROFILE=stress pytest ... for a much longer property search
settings.register_profile("stress", max_examples=2000, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

from ternary_infer.convert import convert, random_checkpoint
from ternary_infer.kernels import PORTABLE_SCALAR, KernelPlan, available_backends
from ternary_infer.model import ModelConfig, TernaryModel

BACKENDS = available_backends()
BACKEND_IDS = [b.id for b in BACKENDS]
SIMD_BACKENDS = [b for b in BACKENDS if b is not PORTABLE_SCALAR]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def desk_config():
    return ModelConfig()


@pytest.fixture(scope="session")
def desk_checkpoint(desk_config):
    return random_checkpoint(desk_config, seed=7)


@pytest.fixture(scope="session")
def desk_converted(desk_checkpoint):
    return convert(desk_checkpoint, alignment=64)


@pytest.fixture(scope="session")
def desk_model(desk_converted):
    return TernaryModel(desk_converted.config, desk_converted.tensors, model_id="desk-seed7")


@pytest.fixture(scope="session")
def tiny_config():
    return ModelConfig(vocab_size=258, dim=32, n_layers=2, n_heads=2, ffn_dim=48, max_seq_len=96)


@pytest.fixture(scope="session")
def tiny_model(tiny_config):
    cm = convert(random_checkpoint(tiny_config, seed=3), alignment=16)
    return TernaryModel(cm.config, cm.tensors, plan=KernelPlan(threads=1))
