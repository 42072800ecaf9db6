"""
Pytest configuration and shared fixtures for the simulator tests.

Provides small grids, a uniform medium, the shipped scenario paths and a
short five-spot configuration that runs in seconds.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from miscible.coefficients import FluidSpec, MediumSpec, SourceSpec, five_spot_sources  # noqa: E402
from miscible.grid import Grid2D  # noqa: E402
from miscible.simconfig import parse_config_text  # noqa: E402

# Test configuration
TEST_CONFIG = {
    "configs_dir": project_root / "configs",
    "small_grid": 16,
    "random_seed": 20240601,
    "short_t_final": 0.05,
    "cli_timeout": 300,  # seconds for subprocess runs
}

SHORT_FIVE_SPOT = """
grid.nx = 16
sources.pattern = "five_spot"
sources.block_fraction = 0.125
time.t_final = 0.05
time.dt_policy = "fixed"
time.dt = 0.01
time.snapshot_every = 2
"""


@pytest.fixture(scope="session")
def test_config():
    """Provide test configuration to all tests."""
    return TEST_CONFIG.copy()


@pytest.fixture
def rng():
    """Seeded random generator, fresh for every test."""
    return np.random.default_rng(TEST_CONFIG["random_seed"])


@pytest.fixture
def grid16():
    return Grid2D.unit_square(16)


@pytest.fixture
def grid32():
    return Grid2D.unit_square(32)


@pytest.fixture
def uniform_medium(grid16):
    return MediumSpec.uniform(grid16)


@pytest.fixture
def constant_fluid():
    return FluidSpec(viscosity_law="constant", mu0=1.0)


@pytest.fixture
def default_fluid():
    return FluidSpec()


@pytest.fixture
def five_spot16(grid16):
    """Balanced five-spot sources with 2x2-cell wells on the 16x16 grid."""
    return five_spot_sources(grid16, 1.0, 1.0, 0.125)


@pytest.fixture
def no_sources(grid16):
    return SourceSpec.none(grid16)


@pytest.fixture
def short_config():
    """A five-spot run with five fixed steps on a 16x16 grid."""
    return parse_config_text(SHORT_FIVE_SPOT, name="short_five_spot")


@pytest.fixture
def short_config_file(tmp_path):
    path = tmp_path / "short.cfg"
    path.write_text(SHORT_FIVE_SPOT, encoding="utf-8")
    return path


# Custom pytest markers
def pytest_configure(config):
    """Configure custom pytest markers."""
    config.addinivalue_line("markers", "unit: mark test as unit test")
    config.addinivalue_line("markers", "integration: mark test as integration test")
    config.addinivalue_line("markers", "slow: mark test as slow running")
    config.addinivalue_line("markers", "e2e: mark test as end-to-end test")
