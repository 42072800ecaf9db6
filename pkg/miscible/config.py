"""
Configuration and constants for the miscible displacement simulator.
"""

import logging
import os
import warnings
from pathlib import Path


def get_project_root() -> Path:
    """Get the absolute path to the project root directory.

    This allows the simulator to find shipped scenarios regardless of the
    current working directory.
    """
    return Path(__file__).parent.parent.resolve()


def get_configs_dir() -> Path:
    """Get the directory holding the shipped scenario files."""
    return get_project_root() / "configs"


def _float_from_env(name: str, default: float) -> float:
    """Read a float from the environment, falling back on bad input."""
    raw = os.getenv(name)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        warnings.warn(f"Invalid {name}={raw!r}, using default {default}")
        return default


def _int_from_env(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        warnings.warn(f"Invalid {name}={raw!r}, using default {default}")
        return default


# Solver defaults
PRESSURE_TOL = _float_from_env("MISCIBLE_PRESSURE_TOL", 1e-10)
PRESSURE_MAX_ITER = _int_from_env("MISCIBLE_PRESSURE_MAX_ITER", 20000)
TRANSPORT_TOL = 1e-12
TRANSPORT_REFINEMENTS = 3
PICARD_TOL = _float_from_env("MISCIBLE_PICARD_TOL", 1e-8)
PICARD_MAX_ITER = 50
CROSS_ITERATIONS = 4

# Right-hand sides with |∫RHS| above this fraction of |Ω| are rejected
COMPATIBILITY_TOL = 1e-10

# Dispersion defaults in grid units; the model itself leaves them open
DEFAULT_MOLECULAR_DIFFUSION = 1e-3
DEFAULT_TRANSVERSE_DISPERSIVITY = 1e-2
DEFAULT_LONGITUDINAL_DISPERSIVITY = 1e-1

# Viscosity defaults
DEFAULT_VISCOSITY_LAW = "quarter_power"
VISCOSITY_LAWS = ("quarter_power", "constant")
DEFAULT_MU0 = 1.0
DEFAULT_MOBILITY_RATIO = 1.0

# Regularity diagnostics
DEFAULT_LADDER_COUNT = 5
DEFAULT_MEYERS_EXPONENT = 3.0
DEFAULT_LEVEL_SET_EXPONENT = 1
DEFAULT_ELL_LIST = (2.0, 4.0)
THETA_BOUNDED = 2.0
THETA_ETA_FRACTION = 0.1
THETA_GROWTH = 1.5
# barrier level k(r) when the injection term vanishes on the cylinder
BARRIER_LEVEL_FLOOR = 1e-8

# Verify suite
INVARIANT_NAMES = (
    "max_principle",
    "mass_balance",
    "zero_mean_pressure",
    "conservation",
    "dispersion_bounds",
    "source_compatibility",
)
MAX_PRINCIPLE_SLACK = 1e-12
MASS_BALANCE_RTOL = 1e-12
CUMULATIVE_BALANCE_RTOL = 1e-10
CONSERVATION_FACTOR = 10.0
DISPERSION_SAMPLES = 100_000

# Snapshot output
SNAPSHOT_SUFFIX = ".snap"
REPORT_SUFFIX = ".json"

# Logging
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
MISCIBLE_LOG_LEVEL = os.getenv("MISCIBLE_LOG_LEVEL", "WARNING").upper()


def get_injected_faults() -> set:
    """Get the invariant names whose inputs should be corrupted.

    Read from MISCIBLE_INJECT_FAULT (comma separated). Used by the test
    suite to prove that every verify check can fail.

    Returns:
        Set of invariant names; unknown names are dropped with a warning
    """
    raw = os.getenv("MISCIBLE_INJECT_FAULT", "")
    faults = {name.strip() for name in raw.split(",") if name.strip()}
    unknown = faults - set(INVARIANT_NAMES)
    if unknown:
        warnings.warn(f"Ignoring unknown fault names: {sorted(unknown)}")
    return faults & set(INVARIANT_NAMES)


def setup_logging(level: str = None) -> None:
    """Configure root logging once for command-line use.

    Args:
        level: Log level name; falls back to MISCIBLE_LOG_LEVEL
    """
    name = (level or MISCIBLE_LOG_LEVEL).upper()
    numeric = getattr(logging, name, None)
    if not isinstance(numeric, int):
        warnings.warn(f"Invalid log level {name!r}, using WARNING")
        numeric = logging.WARNING
    logging.basicConfig(level=numeric, format=LOG_FORMAT)
    logging.getLogger().setLevel(numeric)
