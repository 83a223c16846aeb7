import numpy as np
import pytest

from trustbeta.core import seeded_rng
from trustbeta.env import TaskConfig, reset, synth_demo
from trustbeta.learning import TrainConfig, train_stage2


@pytest.fixture(scope="session")
def task():
    return TaskConfig()


@pytest.fixture(scope="session")
def demos(task):
    rng = seeded_rng(0)
    return [synth_demo(reset(task, rng), task, rng, noise=0.01) for _ in range(30)]


@pytest.fixture(scope="session")
def trained(task, demos):
    """Policy, reward and report from one default-configuration training run."""
    return train_stage2(demos, TrainConfig(seed=1), task)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
