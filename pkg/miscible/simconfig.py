"""
Scenario configuration: the SimulationConfig tree, its loader and the
builder that turns it into grid, medium, fluid, sources and initial state.

Scenario files are flat TOML key-value text with dotted keys::

    grid.nx = 32
    sources.pattern = "five_spot"
    fluid.mobility_ratio = 20.0

Every key has a default except grid.nx and sources.pattern.
"""

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import config as defaults
from .coefficients import (
    FluidSpec,
    MediumSpec,
    SourceSpec,
    balanced,
    checkerboard_permeability,
    five_spot_sources,
)
from .errors import ConfigurationError
from .grid import Grid2D, ScalarField, SymTensor2Field

logger = logging.getLogger(__name__)

REQUIRED_KEYS = ("grid.nx", "sources.pattern")
SOURCE_PATTERNS = ("five_spot", "none", "uniform")
PERMEABILITY_PATTERNS = ("uniform", "checkerboard")
DT_POLICIES = ("fixed", "cfl")
PICARD_NORMS = ("sup", "l2")


@dataclass(frozen=True)
class GridSettings:
    nx: int = 32
    ny: Optional[int] = None
    h: Optional[float] = None
    length: float = 1.0
    origin_x: float = 0.0
    origin_y: float = 0.0

    def build(self) -> Grid2D:
        ny = self.ny if self.ny is not None else self.nx
        h = self.h if self.h is not None else self.length / self.nx
        return Grid2D(int(self.nx), int(ny), float(h), (self.origin_x, self.origin_y))


@dataclass(frozen=True)
class MediumSettings:
    porosity: float = 1.0
    porosity_file: Optional[str] = None
    permeability: float = 1.0
    kxy: float = 0.0
    kyy: Optional[float] = None
    permeability_file: Optional[str] = None
    pattern: str = "uniform"
    checker_jump: float = 0.0
    checker_block: int = 1
    lambda0: Optional[float] = None
    c0: Optional[float] = None


@dataclass(frozen=True)
class FluidSettings:
    m: float = defaults.DEFAULT_MOLECULAR_DIFFUSION
    a: float = defaults.DEFAULT_TRANSVERSE_DISPERSIVITY
    b: float = defaults.DEFAULT_LONGITUDINAL_DISPERSIVITY
    viscosity_law: str = defaults.DEFAULT_VISCOSITY_LAW
    mu0: float = defaults.DEFAULT_MU0
    mobility_ratio: float = defaults.DEFAULT_MOBILITY_RATIO
    c1: Optional[float] = None

    def build(self) -> FluidSpec:
        return FluidSpec(self.m, self.a, self.b, self.viscosity_law, self.mu0, self.mobility_ratio, self.c1)


@dataclass(frozen=True)
class SourceSettings:
    pattern: str = "five_spot"
    rate: float = 1.0
    u_hat: float = 1.0
    block_fraction: float = 1.0 / 16


@dataclass(frozen=True)
class TimeSettings:
    t_final: float = 0.5
    dt: float = 0.01
    dt_policy: str = "cfl"
    cfl_factor: float = 1.0
    snapshot_every: int = 10
    u0: float = 0.0


@dataclass(frozen=True)
class SolverSettings:
    pressure_tol: float = defaults.PRESSURE_TOL
    pressure_max_iter: int = defaults.PRESSURE_MAX_ITER
    transport_tol: float = defaults.TRANSPORT_TOL
    picard_tol: float = defaults.PICARD_TOL
    picard_max_iter: int = defaults.PICARD_MAX_ITER
    picard_norm: str = "sup"
    k_trunc: Union[str, int, None] = "auto"
    cross_diffusion: str = "off"
    cross_iterations: int = defaults.CROSS_ITERATIONS


@dataclass(frozen=True)
class DiagnosticSettings:
    ladder_count: int = defaults.DEFAULT_LADDER_COUNT
    s: float = defaults.DEFAULT_MEYERS_EXPONENT
    s1: int = defaults.DEFAULT_LEVEL_SET_EXPONENT
    ell: Tuple[float, ...] = defaults.DEFAULT_ELL_LIST
    theta1: float = defaults.THETA_BOUNDED
    theta2_fraction: float = defaults.THETA_ETA_FRACTION
    theta3: float = defaults.THETA_GROWTH
    points: Tuple[str, ...] = ()


@dataclass(frozen=True)
class VerifySettings:
    checks: Tuple[str, ...] = defaults.INVARIANT_NAMES


@dataclass(frozen=True)
class MmsSettings:
    grids: Tuple[int, ...] = (16, 32, 64)


@dataclass(frozen=True)
class SimulationConfig:
    """Validated scenario parameters."""

    grid: GridSettings = field(default_factory=GridSettings)
    medium: MediumSettings = field(default_factory=MediumSettings)
    fluid: FluidSettings = field(default_factory=FluidSettings)
    sources: SourceSettings = field(default_factory=SourceSettings)
    time: TimeSettings = field(default_factory=TimeSettings)
    solvers: SolverSettings = field(default_factory=SolverSettings)
    diagnostics: DiagnosticSettings = field(default_factory=DiagnosticSettings)
    verify: VerifySettings = field(default_factory=VerifySettings)
    mms: MmsSettings = field(default_factory=MmsSettings)
    seed: int = 0
    strict_mode: bool = False
    name: str = "scenario"
    base_dir: Optional[str] = None

    def with_grid(self, n: int) -> "SimulationConfig":
        """Same physical domain on an n-cell-wide grid."""
        grid = self.grid.build()
        ny = max(2, int(round(n * grid.ny / grid.nx)))
        return replace(self, grid=replace(self.grid, nx=n, ny=ny, h=grid.length_x / n))

    def override(self, **dotted: Any) -> "SimulationConfig":
        """Copy with dotted-key overrides, e.g. override(**{"time.t_final": 1.0})."""
        config = _apply(self, dotted)
        validate_config(config)
        return config


@dataclass(frozen=True)
class Problem:
    """Fields built from a configuration."""

    grid: Grid2D
    medium: MediumSpec
    fluid: FluidSpec
    sources: SourceSpec
    u0: ScalarField


_SECTIONS = {
    "grid": GridSettings,
    "medium": MediumSettings,
    "fluid": FluidSettings,
    "sources": SourceSettings,
    "time": TimeSettings,
    "solvers": SolverSettings,
    "diagnostics": DiagnosticSettings,
    "verify": VerifySettings,
    "mms": MmsSettings,
}
_TOP_LEVEL = ("seed", "strict_mode", "name")


def _flatten(table: Dict[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat = {}
    for key, value in table.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, dotted + "."))
        else:
            flat[dotted] = value
    return flat


def _coerce(value: Any, current: Any, key: str) -> Any:
    """Match list values to tuple fields and normalize "none" strings."""
    if isinstance(value, str) and value.lower() == "none":
        return None
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            value = [value]
        return tuple(value)
    if isinstance(current, bool) and not isinstance(value, bool):
        raise ConfigurationError(f"{key} must be true or false, got {value!r}")
    if isinstance(current, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _apply(config: SimulationConfig, dotted: Dict[str, Any]) -> SimulationConfig:
    updates: Dict[str, Dict[str, Any]] = {}
    top: Dict[str, Any] = {}
    for key, value in dotted.items():
        if key in _TOP_LEVEL:
            top[key] = _coerce(value, getattr(config, key), key)
            continue
        section, _, name = key.partition(".")
        settings_type = _SECTIONS.get(section)
        if settings_type is None or name not in {f.name for f in fields(settings_type)}:
            raise ConfigurationError(f"unknown configuration key {key!r}")
        current = getattr(getattr(config, section), name)
        updates.setdefault(section, {})[name] = _coerce(value, current, key)
    sections = {
        section: replace(getattr(config, section), **values) for section, values in updates.items()
    }
    return replace(config, **sections, **top)


def parse_config_text(text: str, base_dir: Optional[str] = None, name: str = "scenario") -> SimulationConfig:
    """Parse scenario text into a validated SimulationConfig."""
    try:
        table = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"cannot parse configuration: {exc}") from exc
    flat = _flatten(table)
    missing = [key for key in REQUIRED_KEYS if key not in flat]
    if missing:
        raise ConfigurationError(f"missing required key(s): {', '.join(missing)}")
    config = _apply(SimulationConfig(name=name, base_dir=base_dir), flat)
    validate_config(config)
    return config


def load_config(path, overrides: Optional[Dict[str, Any]] = None) -> SimulationConfig:
    """Load, default-fill and validate a scenario file.

    Args:
        path: Scenario file (flat TOML key-value text)
        overrides: Dotted-key values applied after the file

    Returns:
        Validated SimulationConfig; source compatibility is checked and the
        production scaling, if any, is logged

    Raises:
        ConfigurationError: missing key, unknown key or violated hypothesis
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read configuration {path}: {exc}") from exc
    config = parse_config_text(text, base_dir=str(path.parent.resolve()), name=path.stem)
    if overrides:
        config = _apply(config, overrides)
        validate_config(config)
    build_problem(config)
    logger.info("Loaded configuration %s", path)
    return config


def validate_config(config: SimulationConfig) -> None:
    """Scalar checks of (H1)–(H6) and solver settings, each reported by name."""
    med, src, tim, sol, diag = config.medium, config.sources, config.time, config.solvers, config.diagnostics
    if not med.porosity > 0:
        raise ConfigurationError(f"requires porosity > 0, got {med.porosity}", "H1")
    if med.lambda0 is not None and not med.lambda0 > 0:
        raise ConfigurationError(f"requires lambda0 > 0, got {med.lambda0}", "H1")
    if med.c0 is not None and not med.c0 > 0:
        raise ConfigurationError(f"requires c0 > 0, got {med.c0}", "H2")
    if med.pattern not in PERMEABILITY_PATTERNS:
        raise ConfigurationError(f"medium.pattern must be one of {PERMEABILITY_PATTERNS}")
    if med.checker_jump < 0 or med.checker_block < 1:
        raise ConfigurationError("checkerboard needs jump ≥ 0 and block ≥ 1", "H2")
    config.fluid.build()
    if src.pattern not in SOURCE_PATTERNS:
        raise ConfigurationError(f"sources.pattern must be one of {SOURCE_PATTERNS}")
    if src.rate < 0:
        raise ConfigurationError(f"requires nonnegative source rate, got {src.rate}", "H3")
    if not 0.0 <= src.u_hat <= 1.0:
        raise ConfigurationError(f"requires 0 ≤ u_hat ≤ 1, got {src.u_hat}", "H3")
    if not 0.0 < src.block_fraction <= 0.5:
        raise ConfigurationError(f"sources.block_fraction must lie in (0, 0.5], got {src.block_fraction}")
    if not 0.0 <= tim.u0 <= 1.0:
        raise ConfigurationError(f"requires 0 ≤ u0 ≤ 1, got {tim.u0}", "H6")
    if not tim.t_final > 0 or not tim.dt > 0:
        raise ConfigurationError("time.t_final and time.dt must be positive")
    if tim.dt_policy not in DT_POLICIES:
        raise ConfigurationError(f"time.dt_policy must be one of {DT_POLICIES}")
    if not tim.cfl_factor > 0 or tim.snapshot_every < 1:
        raise ConfigurationError("time.cfl_factor must be positive and time.snapshot_every ≥ 1")
    for key in ("pressure_tol", "transport_tol", "picard_tol"):
        if not getattr(sol, key) > 0:
            raise ConfigurationError(f"solvers.{key} must be positive")
    if sol.pressure_max_iter < 1 or sol.picard_max_iter < 1:
        raise ConfigurationError("iteration caps must be ≥ 1")
    if sol.picard_norm not in PICARD_NORMS:
        raise ConfigurationError(f"solvers.picard_norm must be one of {PICARD_NORMS}")
    if sol.cross_diffusion not in ("off", "deferred", "lagged"):
        raise ConfigurationError("solvers.cross_diffusion must be off, deferred or lagged")
    if sol.k_trunc not in (None, "auto") and not (isinstance(sol.k_trunc, int) and sol.k_trunc >= 1):
        raise ConfigurationError(f"solvers.k_trunc must be auto, none or an integer ≥ 1, got {sol.k_trunc!r}")
    if not diag.s > 2 or diag.s1 < 1 or diag.ladder_count < 3:
        raise ConfigurationError("diagnostics need s > 2, s1 ≥ 1 and at least 3 ladder radii")
    if any(not ell > 1 for ell in diag.ell):
        raise ConfigurationError("diagnostics.ell entries must exceed 1")
    unknown = set(config.verify.checks) - set(defaults.INVARIANT_NAMES)
    if unknown:
        raise ConfigurationError(f"unknown verify checks: {sorted(unknown)}")
    if len(config.mms.grids) < 1:
        raise ConfigurationError("mms.grids needs at least one grid")
    config.grid.build()


def _resolve(config: SimulationConfig, relative: str) -> Path:
    path = Path(relative)
    if not path.is_absolute() and config.base_dir:
        path = Path(config.base_dir) / path
    return path


def _build_medium(config: SimulationConfig, grid: Grid2D) -> MediumSpec:
    from .snapshots import read_snapshot

    med = config.medium
    if med.porosity_file:
        porosity = read_snapshot(_resolve(config, med.porosity_file)).field
        if porosity.grid.shape != grid.shape:
            raise ConfigurationError("porosity file does not match the grid", "H1")
        porosity = ScalarField(grid, porosity.values)
    else:
        porosity = ScalarField.constant(grid, med.porosity)

    if med.permeability_file:
        k = read_snapshot(_resolve(config, med.permeability_file)).field
        if k.grid.shape != grid.shape:
            raise ConfigurationError("permeability file does not match the grid", "H2")
        permeability = SymTensor2Field(grid, k.values, np.zeros(grid.shape), k.values)
    elif med.pattern == "checkerboard":
        permeability = checkerboard_permeability(grid, med.permeability, med.checker_jump, med.checker_block)
    else:
        kyy = med.kyy if med.kyy is not None else med.permeability
        permeability = SymTensor2Field(
            grid,
            np.full(grid.shape, med.permeability),
            np.full(grid.shape, med.kxy),
            np.full(grid.shape, kyy),
        )

    lambda0 = med.lambda0 if med.lambda0 is not None else float(porosity.values.min())
    c0 = med.c0 if med.c0 is not None else float(permeability.eigenvalues()[0].min())
    if not c0 > 0:
        raise ConfigurationError("permeability must be positive definite", "H2")
    return MediumSpec(porosity, permeability, lambda0, c0)


def _build_sources(config: SimulationConfig, grid: Grid2D) -> SourceSpec:
    src = config.sources
    if src.pattern == "none":
        return SourceSpec.none(grid)
    if src.pattern == "uniform":
        q = ScalarField.constant(grid, src.rate)
        return balanced(SourceSpec(q, q, ScalarField.constant(grid, src.u_hat)))
    return balanced(five_spot_sources(grid, src.rate, src.u_hat, src.block_fraction))


def build_problem(config: SimulationConfig) -> Problem:
    """Materialize fields; raises ConfigurationError on any violated hypothesis."""
    grid = config.grid.build()
    return Problem(
        grid=grid,
        medium=_build_medium(config, grid),
        fluid=config.fluid.build(),
        sources=_build_sources(config, grid),
        u0=ScalarField.constant(grid, config.time.u0),
    )
