import json
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import settings

from paits.config import ExperimentConfig, override
from paits.dataio import prepare_data
from paits.synthetic import generate_synthetic
from paits.training import TrainConfig

FIXTURES = Path(__file__).parent / "fixtures"

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

torch.set_num_threads(1)


def load_fixture(name):
    return json.loads((FIXTURES / name).read_text())


def small_experiment(**changes) -> ExperimentConfig:
    base = {
        "synth.n_entities": 120,
        "model.seqlen": 24,
        "model.embed_dim": 16,
        "model.ff_dim": 32,
        "model.static_embed_dim": 8,
        "train.max_epochs": 3,
        "train.finetune_max_epochs": 3,
        "train.pool_size": 2000,
        "windowing.stride": 8.0,
    }
    base.update(changes)
    return override(ExperimentConfig(), **base)


@pytest.fixture(scope="session")
def small_exp():
    return small_experiment()


@pytest.fixture(scope="session")
def small_raw(small_exp):
    return generate_synthetic(small_exp.synth)


@pytest.fixture(scope="session")
def small_data(small_raw, small_exp):
    return prepare_data(small_raw, small_exp)


@pytest.fixture()
def fast_cfg(small_exp) -> TrainConfig:
    return small_exp.train


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
