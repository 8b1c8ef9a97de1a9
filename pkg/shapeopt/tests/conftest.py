import numpy as np
import pytest

from shapeopt.core import config as core_config
from shapeopt.services.parameterization import HicksHenneParam
from shapeopt.services.state_adjoint import AnnulusBenchmark


@pytest.fixture
def rng():
    """Seeded generator for random test vectors."""
    return np.random.default_rng(1234)


@pytest.fixture
def settings_env(monkeypatch):
    """
    Set SHAPEOPT_* environment variables for one test and rebuild the cached
    settings around it.
    """
    def _apply(**values):
        for key, value in values.items():
            monkeypatch.setenv(f"SHAPEOPT_{key.upper()}", str(value))
        core_config.get_settings.cache_clear()
        return core_config.get_settings()

    yield _apply
    monkeypatch.undo()
    core_config.get_settings.cache_clear()


@pytest.fixture(scope="session")
def small_problem():
    """8-node annulus with two layers."""
    return AnnulusBenchmark(n_s=8, layers=2)


@pytest.fixture(scope="session")
def default_problem():
    """32-node annulus with four layers."""
    return AnnulusBenchmark(n_s=32, layers=4)


@pytest.fixture(scope="session")
def small_design(small_problem):
    return small_problem.design_map(HicksHenneParam.uniform(small_problem.baseline, 2))


@pytest.fixture(scope="session")
def default_design(default_problem):
    return default_problem.design_map(HicksHenneParam.uniform(default_problem.baseline, 6))
