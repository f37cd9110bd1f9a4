import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fracap.fbm import FbmEnsemble, TimeGrid, sample_ensemble
from fracap.sde import drift_spec, integrate_two_sided

settings.register_profile("fracap", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("fracap")


def zero_driving(grid: TimeGrid, replicates: int = 1, dim: int = 1, hurst: float = 0.7) -> FbmEnsemble:
    return FbmEnsemble(grid=grid, hurst=hurst, paths=np.zeros((replicates, grid.n_points, dim)))


@pytest.fixture(scope="session")
def small_grid():
    return TimeGrid(-2.0, 0.01, 601)


@pytest.fixture(scope="session")
def small_fbm(small_grid):
    return sample_ensemble(small_grid, 0.7, replicates=8, seed=5)


@pytest.fixture(scope="session")
def ex4_paths():
    return integrate_two_sided(drift_spec("example4"), 0.7, T=20.0, dt=0.05, replicates=16, seed=7)


@pytest.fixture(scope="session")
def fou_paths():
    return integrate_two_sided(drift_spec("fou"), 0.7, T=20.0, dt=0.05, replicates=16, seed=8)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in mod.LINES:
            terminalreporter.write_line(line)
