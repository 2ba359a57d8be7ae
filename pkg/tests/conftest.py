import numpy as np
import pytest

from chdelay.grid import Field, Grid
from chdelay.nonlin import make_conductivity, make_graph, make_potential
from chdelay.scheme import InitialData

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def log_spec():
    return make_potential(make_graph("log", c=1.0), f2="well", a=3.0, coupling="smooth_id", delta=0.1)


@pytest.fixture
def demo_cond():
    return make_conductivity("demo_exp_cos")


@pytest.fixture
def unit_cond():
    return make_conductivity("const", value=1.0)


def default_data(grid, spec, mu_mean=0.3, mu_amp=0.0, rho_mean=0.25, rho_amp=0.05):
    wave = np.ones(grid.shape)
    for x in grid.centers():
        wave = wave * np.cos(np.pi * x)
    return InitialData.from_fields(Field(grid, mu_mean + mu_amp * wave),
                                   Field(grid, rho_mean + rho_amp * wave), spec)


def constant_data(spec, mu, rho, cells=1):
    grid = Grid((cells,))
    return InitialData.from_fields(Field.constant(grid, mu), Field.constant(grid, rho), spec)
