"""
Elliptic pressure solve with no-flow boundary and zero-mean normalization,
conservative Darcy fluxes, and the pressure-side integrability diagnostics.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from .coefficients import FluidSpec, MediumSpec, SourceSpec, mobility
from .config import COMPATIBILITY_TOL, CROSS_ITERATIONS, PRESSURE_MAX_ITER, PRESSURE_TOL
from .errors import ConfigurationError, DegenerateInputError, PressureSolveError, ResolutionError
from .grid import (
    Ball,
    FluxField,
    Grid2D,
    ScalarField,
    ball_fits,
    ball_mask,
    divergence,
    gradient,
    lp_norm,
)
from .linalg import projected_cg, zero_mean

logger = logging.getLogger(__name__)


@dataclass
class PressureSolution:
    """Pressure, Darcy fluxes and solver statistics."""

    p: ScalarField
    v: FluxField
    residual_norm: float
    iterations: int
    residual_history: List[float] = field(default_factory=list)
    flux_correction: float = 0.0


def harmonic_mean(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """Face value 2ab/(a+b) of two positive cell values."""
    return 2.0 * left * right / (left + right)


def two_point_transmissibilities(kx: np.ndarray, ky: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Face transmissibilities from per-cell normal coefficients.

    Args:
        kx: Coefficient acting across vertical faces, shape (ny, nx)
        ky: Coefficient acting across horizontal faces, shape (ny, nx)

    Returns:
        (tx, ty) of shapes (ny, nx+1) and (ny+1, nx), zero on the boundary
    """
    ny, nx = kx.shape
    tx = np.zeros((ny, nx + 1))
    ty = np.zeros((ny + 1, nx))
    tx[:, 1:-1] = harmonic_mean(kx[:, :-1], kx[:, 1:])
    ty[1:-1, :] = harmonic_mean(ky[:-1, :], ky[1:, :])
    return tx, ty


def assemble_two_point(tx: np.ndarray, ty: np.ndarray, h: float) -> sp.csr_matrix:
    """Five-point operator sum_f T_f (x_c - x_n) / h^2 as a CSR matrix."""
    ny, nx = tx.shape[0], ty.shape[1]
    index = np.arange(nx * ny).reshape(ny, nx)
    scale = 1.0 / (h * h)

    left, right = index[:, :-1].ravel(), index[:, 1:].ravel()
    below, above = index[:-1, :].ravel(), index[1:, :].ravel()
    t_x = tx[:, 1:-1].ravel() * scale
    t_y = ty[1:-1, :].ravel() * scale

    rows = np.concatenate([left, right, left, right, below, above, below, above])
    cols = np.concatenate([left, right, right, left, below, above, above, below])
    vals = np.concatenate([t_x, t_x, -t_x, -t_x, t_y, t_y, -t_y, -t_y])
    return sp.coo_matrix((vals, (rows, cols)), shape=(nx * ny, nx * ny)).tocsr()


def face_transmissibilities(u: ScalarField, medium: MediumSpec, fluid: FluidSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Harmonic face averages of (1/mu(u)) K_xx and (1/mu(u)) K_yy."""
    lam = mobility(u, fluid)
    k = medium.permeability
    return two_point_transmissibilities(lam * k.d11, lam * k.d22)


def cross_fluxes(values: np.ndarray, coeff12: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    """Explicit off-diagonal flux -c12 * (tangential derivative) at interior faces.

    Face coefficient and tangential derivative are arithmetic means of the
    two adjacent cells; boundary faces stay zero.
    """
    ny, nx = values.shape
    dy, dx = np.gradient(values, h, edge_order=2)
    fx = np.zeros((ny, nx + 1))
    fy = np.zeros((ny + 1, nx))
    fx[:, 1:-1] = -0.5 * (coeff12[:, :-1] + coeff12[:, 1:]) * 0.5 * (dy[:, :-1] + dy[:, 1:])
    fy[1:-1, :] = -0.5 * (coeff12[:-1, :] + coeff12[1:, :]) * 0.5 * (dx[:-1, :] + dx[1:, :])
    return fx, fy


def _two_point_fluxes(values: np.ndarray, tx: np.ndarray, ty: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    fx = np.zeros_like(tx)
    fy = np.zeros_like(ty)
    fx[:, 1:-1] = -tx[:, 1:-1] * np.diff(values, axis=1) / h
    fy[1:-1, :] = -ty[1:-1, :] * np.diff(values, axis=0) / h
    return fx, fy


def darcy_velocity(p: ScalarField, u: ScalarField, medium: MediumSpec, fluid: FluidSpec) -> FluxField:
    """Face fluxes -T (p_n - p_c) / h with the assembly transmissibilities.

    Off-diagonal permeability adds the same explicit cross flux used by the
    deferred correction in the solve.
    """
    grid = p.grid
    tx, ty = face_transmissibilities(u, medium, fluid)
    fx, fy = _two_point_fluxes(p.values, tx, ty, grid.h)
    if medium.permeability.has_cross_terms():
        cx, cy = cross_fluxes(p.values, mobility(u, fluid) * medium.permeability.d12, grid.h)
        fx, fy = fx + cx, fy + cy
    return FluxField(grid, fx, fy)


def balance_fluxes(v: FluxField, target: np.ndarray) -> Tuple[FluxField, float]:
    """Route the cellwise continuity residual through a spanning tree of faces.

    The residual div v - target is removed row by row along x-faces, and the
    per-row totals are carried up through y-faces, so that div v equals
    target to round-off while boundary faces stay zero.

    Returns:
        (repaired fluxes, largest face correction)
    """
    grid = v.grid
    h = grid.h
    defect = divergence(v).values - target
    row_mean = defect.mean(axis=1)

    gx = np.zeros_like(v.x_faces)
    gx[:, 1:] = h * np.cumsum(defect - row_mean[:, None], axis=1)
    gx[:, -1] = 0.0
    gy = np.zeros_like(v.y_faces)
    gy[1:, :] = h * np.cumsum(row_mean)[:, None]
    gy[-1, :] = 0.0

    correction = float(max(np.abs(gx).max(), np.abs(gy).max()))
    return FluxField(grid, v.x_faces - gx, v.y_faces - gy), correction


def check_compatibility(rhs: np.ndarray, grid: Grid2D) -> None:
    """Reject right-hand sides whose integral is not (numerically) zero."""
    total = float(rhs.sum() * grid.cell_area)
    if abs(total) > COMPATIBILITY_TOL * grid.domain_area:
        raise ConfigurationError(
            f"incompatible sources: ∫(q_I - q_P) dx = {total:.3e} is not zero", "H3"
        )


def solve_pressure(
    u: ScalarField,
    medium: MediumSpec,
    fluid: FluidSpec,
    sources: SourceSpec,
    tol: float = PRESSURE_TOL,
    max_iter: int = PRESSURE_MAX_ITER,
    cross_iterations: int = CROSS_ITERATIONS,
    x0: Optional[ScalarField] = None,
    repair: bool = True,
) -> PressureSolution:
    """Solve -div((1/mu(u)) K grad p) = q_I - q_P with v.n = 0 and mean(p) = 0.

    Args:
        u: Concentration driving the viscosity
        medium: Porosity and permeability
        fluid: Viscosity law
        sources: Compatibility-projected sources
        tol: Relative residual target for conjugate gradients
        max_iter: Conjugate-gradient iteration cap
        cross_iterations: Deferred-correction passes for off-diagonal K
        x0: Optional initial guess
        repair: Remove the solver residual from the fluxes (see balance_fluxes)

    Raises:
        ConfigurationError: sources violate the compatibility condition
        PressureSolveError: iteration cap reached
    """
    grid = u.grid
    started = time.perf_counter()
    rhs = sources.net()
    check_compatibility(rhs, grid)

    tx, ty = face_transmissibilities(u, medium, fluid)
    matrix = assemble_two_point(tx, ty, grid.h)
    diag = matrix.diagonal()
    b = zero_mean(rhs.ravel())

    if not np.any(b):
        zero = ScalarField.constant(grid, 0.0)
        return PressureSolution(zero, FluxField.zeros(grid), 0.0, 0, [0.0], 0.0)

    guess = None if x0 is None else x0.ravel()
    result = projected_cg(matrix.dot, b, diag, tol, max_iter, zero_mean, guess)
    if not result.converged:
        raise PressureSolveError(
            f"pressure CG did not reach tol={tol:.1e} in {max_iter} iterations "
            f"(residual {result.residual_history[-1]:.3e})",
            result.residual_history,
        )
    iterations = result.iterations
    history = list(result.residual_history)
    values = result.x

    k12 = medium.permeability.d12
    if medium.permeability.has_cross_terms() and cross_iterations > 0:
        coeff12 = mobility(u, fluid) * k12
        for _ in range(cross_iterations):
            cx, cy = cross_fluxes(values.reshape(grid.shape), coeff12, grid.h)
            cross_div = (np.diff(cx, axis=1) + np.diff(cy, axis=0)) / grid.h
            corrected = zero_mean(b - cross_div.ravel())
            result = projected_cg(matrix.dot, corrected, diag, tol, max_iter, zero_mean, values)
            if not result.converged:
                raise PressureSolveError(
                    "pressure CG failed during the cross-flux correction", result.residual_history
                )
            iterations += result.iterations
            history.extend(result.residual_history)
            values = result.x

    p = ScalarField(grid, values.reshape(grid.shape))
    v = darcy_velocity(p, u, medium, fluid)
    correction = 0.0
    if repair:
        v, correction = balance_fluxes(v, rhs)

    logger.info(
        "Pressure solved in %d iterations (residual %.2e, flux repair %.2e, %.3fs)",
        iterations,
        result.residual_norm,
        correction,
        time.perf_counter() - started,
    )
    return PressureSolution(p, v, result.residual_norm, iterations, history, correction)


def reverse_holder_diagnostic(p: ScalarField, ball: Ball, s: float, sources: SourceSpec) -> float:
    """Empirical reverse-Hölder (Meyers) ratio on a ball.

    (avg_{B_{r/2}} |grad p|^s)^(1/s) / [(avg_{B_r} |grad p|^2)^(1/2) + r (avg_{B_r} |q_I - q_P|^s)^(1/s)]

    Raises:
        ResolutionError: the doubled ball does not fit in the domain
    """
    if not s > 2:
        raise ConfigurationError(f"reverse-Hölder exponent must exceed 2, got {s}")
    grid = p.grid
    r = ball.radius
    if not ball_fits(grid, Ball(ball.center, 2.0 * r)):
        raise ResolutionError(f"doubled ball of radius {2 * r} around {ball.center} leaves the domain")

    speed = gradient(p).magnitude()
    inner = ball_mask(grid, Ball(ball.center, 0.5 * r))
    outer = ball_mask(grid, ball)
    numerator = np.mean(speed[inner] ** s) ** (1.0 / s)
    source = np.abs(sources.net())[outer]
    denominator = np.sqrt(np.mean(speed[outer] ** 2)) + r * np.mean(source ** s) ** (1.0 / s)
    if denominator == 0.0:
        return 0.0
    return float(numerator / denominator)


def _source_norm(p: ScalarField, sources: SourceSpec, ell: float) -> float:
    norm = lp_norm(sources.net(), p.grid, ell)
    if norm == 0.0 and np.any(p.values):
        raise DegenerateInputError("sources vanish but pressure does not")
    return norm


def maximum_bound_ratio(p: ScalarField, sources: SourceSpec, ell: float) -> float:
    """||p||_inf / ||q_I - q_P||_ell, the empirical constant of the pressure maximum bound."""
    norm = _source_norm(p, sources, ell)
    return 0.0 if norm == 0.0 else lp_norm(p.values, p.grid, np.inf) / norm


def gradient_bound_ratio(p: ScalarField, sources: SourceSpec, ell: float) -> float:
    """||grad p||_ell / ||q_I - q_P||_ell, the empirical constant of the gradient estimate."""
    norm = _source_norm(p, sources, ell)
    return 0.0 if norm == 0.0 else lp_norm(gradient(p).magnitude(), p.grid, ell) / norm
