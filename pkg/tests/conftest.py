import numpy as np
import pytest

from noisesep.separator import SeparatorConfig, SeparatorModel
from noisesep.signals import DatasetConfig, make_item

TINY = dict(N=8, K=4, blocks=1, Q=8, hidden=8)

# filled by tests/test_acceptance.py, printed once at the end of the session
ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_model():
    return SeparatorModel.init(SeparatorConfig(**TINY), seed=1)


@pytest.fixture
def tiny_item():
    return make_item(DatasetConfig("unused", duration_s=0.02), 0)


@pytest.fixture
def short_item():
    return make_item(DatasetConfig("unused", duration_s=0.1), 3)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k.split()[0])):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
