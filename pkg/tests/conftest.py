import sys

import numpy as np
import pytest

from probshield.augment import augment
from probshield.cmdp import make_m1
from probshield.critic import cost_value_iteration


@pytest.fixture
def m1():
    return make_m1()


@pytest.fixture
def q_m1(m1):
    return cost_value_iteration(m1)


@pytest.fixture
def env_m1(m1, q_m1):
    return augment(m1, q_m1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance")
        for line in mod.LINES:
            terminalreporter.write_line(line)
