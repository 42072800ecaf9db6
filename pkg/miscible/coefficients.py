"""
Coefficient laws: porosity, permeability, viscosity, sources and the
hydrodynamic dispersion tensor with its truncation.
"""

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

import numpy as np

from .config import (
    DEFAULT_LONGITUDINAL_DISPERSIVITY,
    DEFAULT_MOBILITY_RATIO,
    DEFAULT_MOLECULAR_DIFFUSION,
    DEFAULT_MU0,
    DEFAULT_TRANSVERSE_DISPERSIVITY,
    DEFAULT_VISCOSITY_LAW,
    VISCOSITY_LAWS,
)
from .errors import ConfigurationError
from .grid import Grid2D, ScalarField, SymTensor2Field

logger = logging.getLogger(__name__)

# Concentrations this close to [0, 1] are clamped without a warning
_CLAMP_SILENT = 1e-9


@dataclass(frozen=True)
class FluidSpec:
    """Dispersion parameters and viscosity law.

    Attributes:
        m: Molecular diffusion
        a: Transverse dispersivity
        b: Longitudinal dispersivity
        viscosity_law: "quarter_power" or "constant"
        mu0: Viscosity of the resident fluid (u = 0)
        mobility_ratio: M = mu(0) / mu(1)
        c1: Lower viscosity bound; derived from the law when omitted
    """

    m: float = DEFAULT_MOLECULAR_DIFFUSION
    a: float = DEFAULT_TRANSVERSE_DISPERSIVITY
    b: float = DEFAULT_LONGITUDINAL_DISPERSIVITY
    viscosity_law: str = DEFAULT_VISCOSITY_LAW
    mu0: float = DEFAULT_MU0
    mobility_ratio: float = DEFAULT_MOBILITY_RATIO
    c1: Optional[float] = None

    def __post_init__(self):
        if self.c1 is None:
            object.__setattr__(self, "c1", self.viscosity_floor())
        self.validate()

    def viscosity_floor(self) -> float:
        """Smallest viscosity the law attains on [0, 1]."""
        if self.viscosity_law == "constant":
            return self.mu0
        return min(self.mu0, self.mu0 / self.mobility_ratio)

    def validate(self) -> None:
        if not self.m > 0:
            raise ConfigurationError(f"requires m > 0, got m={self.m}", "H4")
        if not self.a > 0:
            raise ConfigurationError(f"requires a > 0, got a={self.a}", "H4")
        if not self.b >= self.a:
            raise ConfigurationError(f"requires b ≥ a, got a={self.a}, b={self.b}", "H4")
        if self.viscosity_law not in VISCOSITY_LAWS:
            raise ConfigurationError(
                f"unknown viscosity law {self.viscosity_law!r}; choose from {VISCOSITY_LAWS}", "H5"
            )
        if not self.mu0 > 0 or not self.mobility_ratio > 0:
            raise ConfigurationError("requires mu0 > 0 and mobility ratio > 0", "H5")
        if not self.c1 > 0:
            raise ConfigurationError(f"requires c1 > 0, got c1={self.c1}", "H5")
        if self.viscosity_floor() < self.c1 * (1.0 - 1e-12):
            raise ConfigurationError(
                f"requires mu(u) ≥ c1 on [0, 1]; law reaches {self.viscosity_floor()} < c1={self.c1}",
                "H5",
            )


@dataclass(frozen=True)
class MediumSpec:
    """Porosity and permeability of the porous medium."""

    porosity: ScalarField
    permeability: SymTensor2Field
    lambda0: float
    c0: float

    def __post_init__(self):
        self.validate()

    @property
    def grid(self) -> Grid2D:
        return self.porosity.grid

    def validate(self) -> None:
        if self.porosity.grid != self.permeability.grid:
            raise ConfigurationError("porosity and permeability live on different grids")
        if not self.lambda0 > 0:
            raise ConfigurationError(f"requires lambda0 > 0, got {self.lambda0}", "H1")
        low = float(self.porosity.values.min())
        if low < self.lambda0:
            raise ConfigurationError(f"requires porosity ≥ lambda0={self.lambda0}, found {low}", "H1")
        if not self.c0 > 0:
            raise ConfigurationError(f"requires c0 > 0, got {self.c0}", "H2")
        smallest = float(self.permeability.eigenvalues()[0].min())
        if smallest < self.c0:
            raise ConfigurationError(
                f"requires permeability eigenvalues ≥ c0={self.c0}, found {smallest}", "H2"
            )

    @classmethod
    def uniform(cls, grid: Grid2D, porosity: float = 1.0, permeability: float = 1.0) -> "MediumSpec":
        return cls(
            ScalarField.constant(grid, porosity),
            SymTensor2Field.isotropic(grid, permeability),
            lambda0=porosity,
            c0=permeability,
        )


@dataclass(frozen=True)
class SourceSpec:
    """Injection/production densities (1/time) and injected concentration.

    Attributes:
        q_inject: Injection density q_I
        q_produce: Production density q_P
        u_hat: Injected concentration
        schedule: Optional factor f(t) multiplying both densities
    """

    q_inject: ScalarField
    q_produce: ScalarField
    u_hat: ScalarField
    schedule: Optional[Callable[[float], float]] = field(default=None, compare=False)

    def __post_init__(self):
        self.validate()

    @property
    def grid(self) -> Grid2D:
        return self.q_inject.grid

    @classmethod
    def none(cls, grid: Grid2D) -> "SourceSpec":
        zero = ScalarField.constant(grid, 0.0)
        return cls(zero, zero, zero)

    def validate(self) -> None:
        grids = {self.q_inject.grid, self.q_produce.grid, self.u_hat.grid}
        if len(grids) != 1:
            raise ConfigurationError("source fields live on different grids")
        if self.q_inject.values.min() < 0 or self.q_produce.values.min() < 0:
            raise ConfigurationError("requires q_inject ≥ 0 and q_produce ≥ 0", "H3")
        if self.u_hat.values.min() < 0 or self.u_hat.values.max() > 1:
            raise ConfigurationError("requires 0 ≤ u_hat ≤ 1", "H3")

    def imbalance(self) -> float:
        """∫(q_I - q_P) dx."""
        return self.q_inject.integral() - self.q_produce.integral()

    def net(self) -> np.ndarray:
        """Cellwise q_I - q_P."""
        return self.q_inject.values - self.q_produce.values

    def at(self, t: float) -> "SourceSpec":
        """Sources active at time t."""
        if self.schedule is None:
            return self
        factor = float(self.schedule(t))
        if factor < 0:
            raise ConfigurationError(f"source schedule returned negative factor {factor}", "H3")
        return SourceSpec(
            self.q_inject.with_values(self.q_inject.values * factor),
            self.q_produce.with_values(self.q_produce.values * factor),
            self.u_hat,
        )


def _clamp_unit(u):
    u = np.asarray(u, dtype=np.float64)
    lo, hi = float(u.min()), float(u.max())
    if lo < -_CLAMP_SILENT or hi > 1 + _CLAMP_SILENT:
        warnings.warn(f"concentration outside [0, 1] (range {lo:.3g}..{hi:.3g}); clamping")
    return np.clip(u, 0.0, 1.0)


def viscosity(u, spec: FluidSpec):
    """Viscosity mu(u); scalar in, scalar out, array in, array out.

    Quarter-power mixing: mu0 * [(1 - u) + M^(1/4) u]^(-4).
    """
    scalar = np.ndim(u) == 0
    uc = _clamp_unit(u)
    if spec.viscosity_law == "constant":
        mu = np.full_like(uc, spec.mu0)
    else:
        mu = spec.mu0 * ((1.0 - uc) + spec.mobility_ratio ** 0.25 * uc) ** -4
    return float(mu) if scalar else mu


def mobility(u: ScalarField, spec: FluidSpec) -> np.ndarray:
    """Per-cell 1/mu(u)."""
    return 1.0 / viscosity(u.values, spec)


def dispersion_components(vx, vy, spec: FluidSpec, k: Optional[float] = None):
    """Entries (d11, d12, d22) of D(v), or of D_k(v) when k is given.

    D(v) = (m + a|v|) I + (b - a) v⊗v / |v|,
    D_k(v) = (a eps + m) I + (b - a) eps v⊗v / |v|^2 with eps = min(|v|, k).
    Where |v| <= k the truncated entries are the untruncated ones.
    """
    vx = np.asarray(vx, dtype=np.float64)
    vy = np.asarray(vy, dtype=np.float64)
    s = np.hypot(vx, vy)
    moving = s > 0
    safe = np.where(moving, s, 1.0)
    shear = spec.b - spec.a

    iso = spec.m + spec.a * s
    d11 = np.where(moving, iso + shear * vx * vx / safe, spec.m)
    d12 = np.where(moving, shear * vx * vy / safe, 0.0)
    d22 = np.where(moving, iso + shear * vy * vy / safe, spec.m)
    if k is None:
        return d11, d12, d22

    eps = np.minimum(s, k)
    weight = shear * eps / (safe * safe)
    iso_k = spec.a * eps + spec.m
    t11 = np.where(moving, iso_k + weight * vx * vx, spec.m)
    t12 = np.where(moving, weight * vx * vy, 0.0)
    t22 = np.where(moving, iso_k + weight * vy * vy, spec.m)
    inactive = s <= k
    return (
        np.where(inactive, d11, t11),
        np.where(inactive, d12, t12),
        np.where(inactive, d22, t22),
    )


def _as_matrix(d11, d12, d22) -> np.ndarray:
    return np.array([[float(d11), float(d12)], [float(d12), float(d22)]])


def dispersion_tensor(v, spec: FluidSpec) -> np.ndarray:
    """D(v) for a single 2-vector, as a 2x2 array."""
    return _as_matrix(*dispersion_components(v[0], v[1], spec))


def truncated_dispersion(v, k: int, spec: FluidSpec) -> np.ndarray:
    """D_k(v) for a single 2-vector, as a 2x2 array."""
    if k < 1:
        raise ConfigurationError(f"truncation level must be ≥ 1, got {k}")
    return _as_matrix(*dispersion_components(v[0], v[1], spec, k))


def dispersion_field(vx, vy, spec: FluidSpec, grid: Grid2D, k: Optional[float] = None) -> SymTensor2Field:
    """Per-cell dispersion tensors for cell velocities (vx, vy)."""
    return SymTensor2Field(grid, *dispersion_components(vx, vy, spec, k))


def ellipticity_bounds(speed, spec: FluidSpec, k: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Spectral sandwich for D (k None) or D_k.

    D(v): [m + a|v|, m + b|v|]; D_k(v): [m, b eps_k(|v|) + m].
    """
    speed = np.asarray(speed, dtype=np.float64)
    if k is None:
        return spec.m + spec.a * speed, spec.m + spec.b * speed
    eps = np.minimum(speed, k)
    return np.full_like(speed, spec.m), spec.b * eps + spec.m


def dispersion_lipschitz_bound(spec: FluidSpec) -> float:
    """Frobenius Lipschitz constant of v -> D_k(v), uniform in k."""
    return spec.a + 3.0 * (spec.b - spec.a)


def project_compatible_sources(q_inject: ScalarField, q_produce: ScalarField) -> Tuple[ScalarField, ScalarField]:
    """Rescale q_produce so that ∫(q_I - q_P) dx = 0.

    Raises:
        ConfigurationError: one side integrates to zero and the other does not
    """
    if q_inject.values.min() < 0 or q_produce.values.min() < 0:
        raise ConfigurationError("sources must be nonnegative", "H3")
    injected = q_inject.integral()
    produced = q_produce.integral()
    if injected == 0.0 and produced == 0.0:
        return q_inject, q_produce
    if injected == 0.0 or produced == 0.0:
        raise ConfigurationError(
            f"compatibility ∫(q_I - q_P) = 0 cannot be restored by scaling "
            f"(∫q_I={injected:.6g}, ∫q_P={produced:.6g})",
            "H3",
        )
    factor = injected / produced
    if factor == 1.0:
        return q_inject, q_produce
    logger.info("Scaling production by %.12g to balance sources", factor)
    return q_inject, q_produce.with_values(q_produce.values * factor)


def balanced(sources: SourceSpec) -> SourceSpec:
    """Sources with production rescaled for compatibility."""
    q_i, q_p = project_compatible_sources(sources.q_inject, sources.q_produce)
    if q_p is sources.q_produce:
        return sources
    return replace(sources, q_produce=q_p)


def corner_block(grid: Grid2D, fraction: float, corner: str) -> np.ndarray:
    """Mask of the square cell block of side fraction*L in a domain corner."""
    bx = max(1, int(round(fraction * grid.nx)))
    by = max(1, int(round(fraction * grid.ny)))
    mask = np.zeros(grid.shape, dtype=bool)
    rows = slice(0, by) if corner[0] == "s" else slice(grid.ny - by, grid.ny)
    cols = slice(0, bx) if corner[1] == "w" else slice(grid.nx - bx, grid.nx)
    mask[rows, cols] = True
    return mask


def five_spot_sources(grid: Grid2D, rate: float, u_hat: float = 1.0, block_fraction: float = 1.0 / 16) -> SourceSpec:
    """Quarter five-spot: injector block at the south-west corner, producer at the north-east.

    Both blocks carry total rate `rate` (area per time), so the pair is
    balanced by construction.
    """
    inject = corner_block(grid, block_fraction, "sw")
    produce = corner_block(grid, block_fraction, "ne")
    q_i = np.where(inject, rate / (inject.sum() * grid.cell_area), 0.0)
    q_p = np.where(produce, rate / (produce.sum() * grid.cell_area), 0.0)
    return SourceSpec(
        ScalarField(grid, q_i),
        ScalarField(grid, q_p),
        ScalarField(grid, np.where(inject, u_hat, 0.0)),
    )


def checkerboard_permeability(grid: Grid2D, base: float, jump: float, block: int = 1) -> SymTensor2Field:
    """Isotropic K alternating between base and base*(1 + jump) on blocks of cells."""
    ii, jj = np.meshgrid(np.arange(grid.nx), np.arange(grid.ny))
    odd = ((ii // block + jj // block) % 2).astype(np.float64)
    k = base * (1.0 + jump * odd)
    return SymTensor2Field(grid, k, np.zeros(grid.shape), k)
