import numpy as np
import pytest

from ddvar import swe
from ddvar.assimilation import AssimilationSetup
from ddvar.covariance import CovarianceFactor
from ddvar.experiment import initial_truth
from ddvar.observations import observation_layout, synth_observations
from ddvar.spacetime import SpaceTimeGrid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid8():
    return SpaceTimeGrid.band(8, 4, 3600.0)


@pytest.fixture
def params():
    return swe.SweParams()


def make_setup(grid, params, seed=0, kind="diagonal", sigma_r=(0.3, 0.3, 3.0), coverage=0.25,
               noise=1.0):
    """Small noise-free twin problem used throughout the tests."""
    rng = np.random.default_rng(seed)
    z0 = initial_truth(grid, params)
    truth = swe.propagate(z0, params, grid, grid.M - 1)
    cov = CovarianceFactor.for_grid(grid, kind, (1.0, 1.0, 10.0), 1.0)
    background = z0 + noise * cov.apply(rng.standard_normal(grid.state_shape))
    layout = observation_layout(grid, rng, every=1, coverage=coverage, boundary_rows=0)
    obs = synth_observations(truth, layout, 0.0, rng)
    return AssimilationSetup(grid, params, background, cov, obs, sigma_r=sigma_r), truth


@pytest.fixture
def setup8(grid8, params):
    return make_setup(grid8, params)[0]


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
