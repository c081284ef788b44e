import sys

import numpy as np
import pytest

from lipstab.model import example_params, example_plant, example_polytope
from lipstab.policy import TrainConfig, train
from lipstab.synthesis import SynthesisConfig, synthesize


@pytest.fixture(scope="session")
def plant():
    return example_plant()


@pytest.fixture(scope="session")
def params():
    return example_params()


@pytest.fixture(scope="session")
def polytope():
    return example_polytope()


@pytest.fixture(scope="session")
def synthesis_result(plant, params, polytope):
    """Full iterative synthesis on the example plant (about 20 s)."""
    return synthesize(plant, params, polytope, SynthesisConfig(w=1.1, n_steps=20))


@pytest.fixture(scope="session")
def training_result(plant, params, synthesis_result):
    """Full-length training run of the perturbation controller (about a minute)."""
    res = synthesis_result
    return train(plant, res.K, res.L, res.P, res.sigma, params, TrainConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance criterion lines collected by ``test_acceptance.py``."""
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[number])
