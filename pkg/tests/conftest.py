import numpy as np
import pytest

from rebarplan.env import GridSpec, make_grid
from rebarplan.kinematics import RobotModel, fit_all


@pytest.fixture(scope="session")
def model():
    return RobotModel()


@pytest.fixture(scope="session")
def reach(model):
    return fit_all(model, 20000, 0)


@pytest.fixture(scope="session")
def grid3():
    return make_grid(GridSpec(n_h=3, n_v=3, spacing_m=0.15))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
