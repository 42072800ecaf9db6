"""
Implicit concentration transport in divergence form.

One backward-Euler step of

    Phi du/dt - div(Phi D_k(v) grad u - u v) + q_P u = q_I u_hat

with two-point dispersion, first-order upwind advection and the storage and
production terms on the diagonal. The resulting matrix is an M-matrix, so the
step satisfies a discrete maximum principle and conserves mass exactly.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, List, NamedTuple, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .coefficients import FluidSpec, MediumSpec, SourceSpec, dispersion_components
from .config import TRANSPORT_REFINEMENTS, TRANSPORT_TOL
from .errors import ConfigurationError, TransportSolveError
from .grid import FluxField, ScalarField, cell_velocity, gradient
from .pressure import assemble_two_point, cross_fluxes, two_point_transmissibilities

logger = logging.getLogger(__name__)

CROSS_DIFFUSION_MODES = ("off", "deferred", "lagged")


@dataclass
class TransportStepReport:
    """Result of one implicit transport step.

    Attributes:
        u_new: Concentration after the step
        mass_before: sum Phi u_old h^2
        mass_after: sum Phi u_new h^2
        dt: Step length
        min_u, max_u: Range of u_new
        linear_iterations: LU solves including refinement passes
        source_mass: dt * sum (q_I u_hat - q_P u_new + forcing) h^2
        residual_norm: Relative residual of the linear solve
        k_active: Truncation level used (None for untruncated)
    """

    u_new: ScalarField
    mass_before: float
    mass_after: float
    dt: float
    min_u: float
    max_u: float
    linear_iterations: int
    source_mass: float = 0.0
    residual_norm: float = 0.0
    k_active: Optional[int] = None

    @property
    def balance_error(self) -> float:
        """mass_after - mass_before - source_mass."""
        return self.mass_after - self.mass_before - self.source_mass


class FlowState(NamedTuple):
    time: float
    u: ScalarField
    v: FluxField


@dataclass
class EnergyReport:
    """Discrete energy: sup_t sum Phi u^2 h^2 plus sum_t dt sum (1+|v|)|grad u|^2 h^2."""

    storage_sup: float
    dissipation: float

    @property
    def total(self) -> float:
        return self.storage_sup + self.dissipation


def cell_speed(v: FluxField) -> np.ndarray:
    vx, vy = cell_velocity(v)
    return np.hypot(vx, vy)


def resolve_truncation(v: FluxField, k_trunc: Union[None, int, str]) -> Optional[int]:
    """Active truncation level: None (untruncated), "auto", or a fixed k ≥ 1.

    "auto" picks ceil(max cell |v|) (at least 1), which leaves D_k equal to D.
    """
    if k_trunc is None:
        return None
    if k_trunc == "auto":
        return max(1, int(math.ceil(float(cell_speed(v).max()))))
    k = int(k_trunc)
    if k < 1:
        raise ConfigurationError(f"truncation level must be ≥ 1, got {k_trunc}")
    return k


def suggest_dt(v: FluxField, factor: float = 1.0) -> Optional[float]:
    """Advective step factor * h / max|v|; None when the flow is at rest."""
    top = v.max_abs()
    if top == 0.0:
        return None
    return factor * v.grid.h / top


def _upwind_matrix(v: FluxField) -> sp.csr_matrix:
    """First-order upwind discretization of div(u v) per unit area."""
    grid = v.grid
    nx, ny, h = grid.nx, grid.ny, grid.h
    index = np.arange(nx * ny).reshape(ny, nx)

    left, right = index[:, :-1].ravel(), index[:, 1:].ravel()
    below, above = index[:-1, :].ravel(), index[1:, :].ravel()
    fx = v.x_faces[:, 1:-1].ravel() / h
    fy = v.y_faces[1:-1, :].ravel() / h

    out_x, in_x = np.maximum(fx, 0.0), np.minimum(fx, 0.0)
    out_y, in_y = np.maximum(fy, 0.0), np.minimum(fy, 0.0)
    rows = np.concatenate([left, left, right, right, below, below, above, above])
    cols = np.concatenate([left, right, right, left, below, above, above, below])
    vals = np.concatenate([out_x, in_x, -in_x, -out_x, out_y, in_y, -in_y, -out_y])
    return sp.coo_matrix((vals, (rows, cols)), shape=(nx * ny, nx * ny)).tocsr()


def _solve(matrix: sp.csr_matrix, rhs: np.ndarray, tol: float, refinements: int):
    rhs_norm = float(np.linalg.norm(rhs))
    if rhs_norm == 0.0:
        return np.zeros_like(rhs), 0, 0.0
    lu = splu(matrix.tocsc())
    solution = lu.solve(rhs)
    solves = 1
    history = []
    while True:
        residual = rhs - matrix @ solution
        history.append(float(np.linalg.norm(residual)) / rhs_norm)
        if history[-1] <= tol or solves > refinements:
            break
        solution = solution + lu.solve(residual)
        solves += 1
    if history[-1] > tol:
        raise TransportSolveError(
            f"transport solve stalled at relative residual {history[-1]:.3e} (tol {tol:.1e})",
            history,
        )
    return solution, solves, history[-1]


def advance_concentration(
    u_old: ScalarField,
    v: FluxField,
    medium: MediumSpec,
    fluid: FluidSpec,
    sources: SourceSpec,
    dt: float,
    k_trunc: Union[None, int, str] = None,
    forcing: Optional[ScalarField] = None,
    cross_diffusion: str = "off",
    u_lag: Optional[ScalarField] = None,
    tol: float = TRANSPORT_TOL,
    refinements: int = TRANSPORT_REFINEMENTS,
) -> TransportStepReport:
    """Advance u by one backward-Euler step with velocity v.

    Args:
        u_old: Concentration at the start of the step
        v: Conservative Darcy fluxes
        medium: Porosity and permeability
        fluid: Dispersion parameters
        sources: Sources active over the step
        dt: Step length, positive
        k_trunc: None, "auto" or a fixed truncation level for D_k
        forcing: Extra right-hand side (manufactured solutions)
        cross_diffusion: "off", "deferred" (explicit from u_old) or
            "lagged" (explicit from u_lag)
        u_lag: Previous Picard iterate for the lagged mode
        tol: Relative residual target for the linear solve
        refinements: Iterative-refinement passes allowed after the LU solve

    Raises:
        ConfigurationError: dt ≤ 0 or unknown cross-diffusion mode
        TransportSolveError: residual above tol after refinement
    """
    if not dt > 0:
        raise ConfigurationError(f"time step must be positive, got {dt}")
    if cross_diffusion not in CROSS_DIFFUSION_MODES:
        raise ConfigurationError(
            f"unknown cross-diffusion mode {cross_diffusion!r}; choose from {CROSS_DIFFUSION_MODES}"
        )
    grid = u_old.grid
    h = grid.h
    phi = medium.porosity.values
    q_i, q_p = sources.q_inject.values, sources.q_produce.values

    k_active = resolve_truncation(v, k_trunc)
    vx, vy = cell_velocity(v)
    d11, d12, d22 = dispersion_components(vx, vy, fluid, k_active)
    tx, ty = two_point_transmissibilities(phi * d11, phi * d22)

    storage = phi / dt
    matrix = (
        assemble_two_point(tx, ty, h)
        + _upwind_matrix(v)
        + sp.diags((storage + q_p).ravel())
    ).tocsr()

    rhs = storage * u_old.values + q_i * sources.u_hat.values
    if forcing is not None:
        rhs = rhs + forcing.values
    if cross_diffusion != "off":
        base = u_lag if (cross_diffusion == "lagged" and u_lag is not None) else u_old
        cx, cy = cross_fluxes(base.values, phi * d12, h)
        rhs = rhs - (np.diff(cx, axis=1) + np.diff(cy, axis=0)) / h

    solution, solves, residual = _solve(matrix, rhs.ravel(), tol, refinements)
    u_new = ScalarField(grid, solution.reshape(grid.shape))

    area = grid.cell_area
    mass_before = float(np.sum(phi * u_old.values) * area)
    mass_after = float(np.sum(phi * u_new.values) * area)
    gain = q_i * sources.u_hat.values - q_p * u_new.values
    if forcing is not None:
        gain = gain + forcing.values
    source_mass = float(dt * np.sum(gain) * area)

    report = TransportStepReport(
        u_new=u_new,
        mass_before=mass_before,
        mass_after=mass_after,
        dt=dt,
        min_u=float(u_new.values.min()),
        max_u=float(u_new.values.max()),
        linear_iterations=solves,
        source_mass=source_mass,
        residual_norm=residual,
        k_active=k_active,
    )
    logger.debug(
        "Transport step dt=%.3e: u in [%.3e, %.3e], balance error %.2e",
        dt,
        report.min_u,
        report.max_u,
        report.balance_error,
    )
    return report


class EnergyAccumulator:
    """Running evaluation of the discrete energy along a trajectory."""

    def __init__(self, medium: MediumSpec):
        self.medium = medium
        self.storage_sup = 0.0
        self.dissipation = 0.0
        self._last_time = None

    def add(self, state: FlowState) -> None:
        area = self.medium.grid.cell_area
        u = state.u.values
        storage = float(np.sum(self.medium.porosity.values * u * u) * area)
        self.storage_sup = max(self.storage_sup, storage)
        if self._last_time is not None:
            dt = state.time - self._last_time
            weight = 1.0 + cell_speed(state.v)
            self.dissipation += dt * float(np.sum(weight * gradient(state.u).magnitude_squared()) * area)
        self._last_time = state.time

    def report(self) -> EnergyReport:
        return EnergyReport(self.storage_sup, self.dissipation)


def energy_monitor(history: Iterable[FlowState], medium: MediumSpec) -> EnergyReport:
    """Energy of a trajectory of (time, u, v) states.

    The dissipation term charges each interval to its right endpoint,
    matching the implicit step.
    """
    accumulator = EnergyAccumulator(medium)
    count = 0
    for state in history:
        accumulator.add(state)
        count += 1
    if count == 0:
        raise ConfigurationError("energy monitor needs a non-empty history")
    return accumulator.report()
