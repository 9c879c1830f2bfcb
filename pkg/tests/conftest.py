import numpy as np
import pytest

from tic_solve import grid, mean_variance


@pytest.fixture(scope="session")
def mv_params():
    return mean_variance.MvParams(alpha=0.08, r=0.03, sigma=0.2, gamma=2.0, T=1.0)


@pytest.fixture(scope="session")
def mv_closed(mv_params):
    return mean_variance.solve_mv(mv_params)


@pytest.fixture(scope="session")
def mv_problem(mv_params):
    model = mean_variance.mv_model(mv_params, 0.0, 2.0)
    return grid.ExtendedProblem.from_reward(model, mean_variance.mv_reward(mv_params))


@pytest.fixture(scope="session")
def mv_grid_spec():
    return grid.GridSpec(0.2, 5.0, nx=201, nu=101)


@pytest.fixture(scope="session")
def mv_grid(mv_problem, mv_grid_spec):
    return grid.solve_extended(mv_problem, mv_grid_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[number])
