"""
Shared fixtures for the sbm-lab tests.

Tests marked ``slow`` run only when LAB_RUN_SLOW=1.
"""
import pytest

from sbm_lab.core.config import config as lab_config
from sbm_lab.numerics.grid import Grid1D
from sbm_lab.numerics.log_laplace import LogLaplaceSolver


def pytest_collection_modifyitems(config, items):
    if lab_config.run_slow:
        return
    skip_slow = pytest.mark.skip(reason="set LAB_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def coarse_grid():
    """[-4, 4] with dx = 0.1."""
    return Grid1D(4.0, 81)


@pytest.fixture
def fine_grid():
    """[-6, 6] with dx = 0.05."""
    return Grid1D(6.0, 241)


@pytest.fixture
def solver(fine_grid):
    return LogLaplaceSolver(grid=fine_grid, dt=2e-3)


@pytest.fixture
def coarse_solver(coarse_grid):
    return LogLaplaceSolver(grid=coarse_grid, dt=5e-3)


@pytest.fixture
def lab_dirs(tmp_path, monkeypatch):
    """Point the config and output directories at a temporary tree."""
    config_dir = tmp_path / "config"
    config_dir.mkdir()
    monkeypatch.setattr(lab_config, "config_dir", config_dir)
    monkeypatch.setattr(lab_config, "output_dir", tmp_path / "runs")
    from sbm_lab.utils.config_manager import config_manager
    config_manager.clear_cache()
    yield config_dir
    config_manager.clear_cache()
