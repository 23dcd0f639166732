import numpy as np
import pytest

from attboot.data import Dataset

from acceptance_log import ACCEPTANCE_LOG


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LOG:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LOG:
            terminalreporter.write_line(line)


@pytest.fixture
def toy_dataset():
    """Ten units, two covariates, four treated."""
    rng = np.random.default_rng(11)
    x = rng.normal(size=(10, 2))
    z = np.array([1, 0, 1, 0, 0, 1, 0, 0, 1, 0])
    y = x @ [0.5, -0.3] + z + rng.normal(scale=0.5, size=10)
    return Dataset(x, z, y)


def make_observational(n, seed, prevalence_shift=-1.0, effect=1.0, p=3):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    lin = prevalence_shift + x @ np.linspace(0.6, 0.2, p)
    z = (rng.random(n) < 1 / (1 + np.exp(-lin))).astype(int)
    y = effect * z + x @ np.linspace(0.3, 0.9, p) + rng.normal(size=n)
    return Dataset(x, z, y)


@pytest.fixture
def obs_dataset():
    return make_observational(400, seed=5)
