import numpy as np
import pytest

from salcloud.elitenet import TrainConfig, init_model, train
from salcloud.synthetic import make_object_dataset


@pytest.fixture(scope="session")
def trained():
    """Small classifier trained on the separable synthetic set, with its data."""
    data = make_object_dataset(200, seed=0)
    res = train(init_model(0), data, TrainConfig(epochs=10, seed=0))
    return res.model, data


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
