import numpy as np
import pytest

from opesel.bandit import SyntheticEnvironment, behavior_mixture, sample_logged_data, softmax_policy


@pytest.fixture(scope="session")
def env():
    return SyntheticEnvironment(seed=3, dim=4, n_actions=5)


@pytest.fixture(scope="session")
def behavior(env):
    return behavior_mixture(env, [-2.0, 2.0])


@pytest.fixture(scope="session")
def data(env, behavior):
    return sample_logged_data(env, behavior, 300, seed=11)


@pytest.fixture(scope="session")
def target(env):
    return softmax_policy(env, 5.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
