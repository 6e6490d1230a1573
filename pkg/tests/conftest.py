import numpy as np
import pytest

from sparsefit.model import observe, study_schedule, simulate_trajectory, reference_theta


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical replication")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synthetic_subject():
    """Set-0 parameters observed on the study schedule."""
    theta = reference_theta(0)
    gen = np.random.default_rng(2024)
    traj = simulate_trajectory(theta, 0.5, 280, 1.0, gen)
    obs = observe(traj, study_schedule(), theta.noise, gen)
    return theta, traj, obs


SMALL_CONFIG = """\
seed = 11
mcmc.iterations = 1500
mcmc.burn_in = 500
abc.accepted = 1000
abc.quantile = 0.05
abc.chunk_size = 2000
output.resample = 1000
output.learnability_prior_draws = 50000
"""


@pytest.fixture(scope="session")
def small_config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("config") / "small.toml"
    path.write_text(SMALL_CONFIG)
    return path


@pytest.fixture(scope="session")
def data_path(tmp_path_factory, synthetic_subject):
    from sparsefit.io import write_observations
    from sparsefit.model import ObservationSet
    _, _, obs = synthetic_subject
    path = tmp_path_factory.mktemp("data") / "data.csv"
    write_observations(path, ObservationSet(obs.days, obs.series, obs.values, "S1"))
    return path


ACCEPTANCE_LINES = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion and assert it."""
    def record(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        assert passed, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
