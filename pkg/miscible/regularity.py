"""
Regularity diagnostics: maximal and sharp functions, local gradient energy,
cylinder oscillation and its decay, the level-set and logarithmic-barrier
quantities, the frozen-coefficient comparison, and the point classifier.

Balls use cell-center distance, radii come from the dyadic ladder, and all
averages are taken over the part of the ball inside the domain.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy import ndimage, stats

from .coefficients import FluidSpec, MediumSpec, SourceSpec, viscosity
from .config import BARRIER_LEVEL_FLOOR, PRESSURE_TOL, THETA_BOUNDED, THETA_ETA_FRACTION, THETA_GROWTH
from .errors import ConfigurationError, DegenerateInputError, ResolutionError, SolverError
from .grid import (
    Ball,
    Cylinder,
    Grid2D,
    ScalarField,
    Snapshot,
    ball_fits,
    ball_mask,
    cylinder_restrict,
    cylinder_window,
    disk_offsets,
    domain_ladder,
    dyadic_ladder,
    gradient,
    lp_norm,
)
from .linalg import projected_cg
from .pressure import reverse_holder_diagnostic

logger = logging.getLogger(__name__)

Series = List[Tuple[float, float]]


def _footprint(radius_cells: float) -> np.ndarray:
    di, dj = disk_offsets(radius_cells)
    reach = int(np.abs(di).max()) if di.size else 0
    footprint = np.zeros((2 * reach + 1, 2 * reach + 1), dtype=bool)
    footprint[dj + reach, di + reach] = True
    return footprint


def _ball_means(values: np.ndarray, radius_cells: float) -> Tuple[np.ndarray, np.ndarray]:
    """Clipped-ball means of values around every cell, and member counts."""
    weights = _footprint(radius_cells).astype(np.float64)
    sums = ndimage.correlate(values, weights, mode="constant", cval=0.0)
    counts = ndimage.correlate(np.ones_like(values), weights, mode="constant", cval=0.0)
    return sums / counts, counts


def _shift_pairs(shape: Tuple[int, int], radius_cells: float):
    """Yield (dst, src) slices pairing each center with its member at a disk offset."""
    ny, nx = shape
    di, dj = disk_offsets(radius_cells)
    for a, b in zip(di.tolist(), dj.tolist()):
        if abs(a) >= nx or abs(b) >= ny:
            continue
        dst = (slice(max(0, -b), ny - max(0, b)), slice(max(0, -a), nx - max(0, a)))
        src = (slice(max(0, b), ny + min(0, b)), slice(max(0, a), nx + min(0, a)))
        yield dst, src


def _mean_oscillation(values: np.ndarray, radius_cells: float) -> np.ndarray:
    """avg_{B_R(y)} |f - (f)_{y,R}| for every center y."""
    means, counts = _ball_means(values, radius_cells)
    deviation = np.zeros_like(values)
    for dst, src in _shift_pairs(values.shape, radius_cells):
        deviation[dst] += np.abs(values[src] - means[dst])
    return deviation / counts


def maximal_function(f: ScalarField) -> ScalarField:
    """M(f)(x): largest average of |f| over ladder balls centered at x.

    The ladder runs from the single cell up to a ball covering the domain.
    """
    grid = f.grid
    magnitude = np.abs(f.values)
    best = magnitude.copy()
    for radius in domain_ladder(grid)[1:]:
        means, _ = _ball_means(magnitude, radius / grid.h)
        np.maximum(best, means, out=best)
    return ScalarField(grid, best)


def sharp_function(f: ScalarField) -> ScalarField:
    """f#(x): largest mean oscillation over ladder balls B_R(y) that contain x."""
    grid = f.grid
    best = np.zeros(grid.shape)
    for radius in domain_ladder(grid)[1:]:
        radius_cells = radius / grid.h
        oscillation = _mean_oscillation(f.values, radius_cells)
        # x lies in B_R(y) exactly when y lies in B_R(x)
        reach = ndimage.maximum_filter(oscillation, footprint=_footprint(radius_cells), mode="constant", cval=0.0)
        np.maximum(best, reach, out=best)
    return ScalarField(grid, best)


def fefferman_stein_ratio(f: ScalarField, ell: float) -> float:
    """||f - mean f||_ell / ||f#||_ell.

    Raises:
        DegenerateInputError: f# vanishes (f constant)
    """
    if not ell > 1:
        raise ConfigurationError(f"ell must exceed 1, got {ell}")
    sharp = sharp_function(f)
    denominator = lp_norm(sharp.values, f.grid, ell)
    if denominator == 0.0:
        raise DegenerateInputError("sharp function vanishes identically (constant field)")
    return lp_norm(f.values - f.values.mean(), f.grid, ell) / denominator


def hardy_littlewood_ratio(f: ScalarField, ell: float) -> float:
    """||M f||_ell / ||f||_ell."""
    denominator = lp_norm(f.values, f.grid, ell)
    if denominator == 0.0:
        raise DegenerateInputError("field vanishes identically")
    return lp_norm(maximal_function(f).values, f.grid, ell) / denominator


def _require_fit(grid: Grid2D, ball: Ball) -> None:
    if not ball_fits(grid, ball):
        raise ResolutionError(f"ball of radius {ball.radius} around {ball.center} leaves the domain")


def local_gradient_energy(
    p_history: Sequence[Snapshot],
    x0: Tuple[int, int],
    ladder: Sequence[float],
    t_index: int = -1,
) -> Series:
    """(rho, sup over the cylinder window of avg_{B_rho(x0)} |grad p|^2) for each radius."""
    if not p_history:
        raise ResolutionError("pressure history is empty")
    grid = p_history[0].field.grid
    energy_cache: Dict[int, np.ndarray] = {}
    series = []
    for rho in ladder:
        ball = Ball(x0, rho)
        _require_fit(grid, ball)
        window = cylinder_window(p_history, Cylinder(ball, t_index))
        if not window:
            raise ResolutionError(f"empty time window for radius {rho}")
        mask = ball_mask(grid, ball)
        best = 0.0
        for k in window:
            if k not in energy_cache:
                energy_cache[k] = gradient(p_history[k].field).magnitude_squared()
            best = max(best, float(energy_cache[k][mask].mean()))
        series.append((float(rho), best))
    return series


def cylinder_extremes(u_history: Sequence[Snapshot], cylinder: Cylinder) -> Tuple[float, float]:
    """(M_r, m_r): max and min of u over the cylinder."""
    samples = cylinder_restrict(u_history, cylinder)
    values = np.concatenate([sample.values for sample in samples])
    return float(values.max()), float(values.min())


def cylinder_oscillation(u_history: Sequence[Snapshot], z0: Tuple[int, int, int], ladder: Sequence[float]) -> Series:
    """(r, omega_r) with omega_r = max - min of u over Q_r(z0)."""
    i, j, t_index = z0
    series = []
    for r in ladder:
        top, bottom = cylinder_extremes(u_history, Cylinder(Ball((i, j), r), t_index))
        series.append((float(r), top - bottom))
    return series


@dataclass
class DecayFit:
    """Least-squares fit log omega_r = alpha log r + c."""

    alpha: float
    residual: float
    points: int


def decay_exponent_fit(osc_series: Series) -> Optional[DecayFit]:
    """Slope of log omega against log r over the positive points.

    Returns None (inconclusive) with fewer than three positive points.
    """
    points = [(r, w) for r, w in osc_series if r > 0 and w > 0]
    if len(points) < 3:
        return None
    log_r = np.log([r for r, _ in points])
    log_w = np.log([w for _, w in points])
    fit = stats.linregress(log_r, log_w)
    predicted = fit.intercept + fit.slope * log_r
    residual = float(np.sqrt(np.mean((log_w - predicted) ** 2)))
    return DecayFit(float(fit.slope), residual, len(points))


def _ball_values(u: ScalarField, ball: Ball) -> Tuple[np.ndarray, np.ndarray]:
    mask = ball_mask(u.grid, ball)
    if not mask.any():
        raise ResolutionError(f"ball {ball} has no member cells")
    return mask, u.values[mask]


def level_set_fraction(
    u_snapshot: ScalarField,
    ball: Ball,
    s1: int,
    M_r: Optional[float] = None,
    omega_r: Optional[float] = None,
) -> float:
    """Fraction of ball cells with u > M_r - omega_r / 2^s1.

    M_r and omega_r default to the max and the oscillation over the ball.

    Raises:
        DegenerateInputError: omega_r = 0
    """
    _, values = _ball_values(u_snapshot, ball)
    top = float(values.max()) if M_r is None else float(M_r)
    spread = top - float(values.min()) if omega_r is None else float(omega_r)
    if spread <= 0.0:
        raise DegenerateInputError("zero oscillation on the ball")
    threshold = top - spread / 2 ** s1
    return float(np.count_nonzero(values > threshold)) / values.size


def log_barrier_field(
    u_snapshot: ScalarField,
    cylinder: Cylinder,
    s1: int,
    k_r: float,
    M_r: Optional[float] = None,
    omega_r: Optional[float] = None,
    u_history: Optional[Sequence[Snapshot]] = None,
) -> ScalarField:
    """v = ln[(omega_r + k_r) / (2^s1 (M_r - u) + k_r)] on the cylinder's ball; 0 elsewhere.

    M_r and omega_r are taken, in order, from the arguments, from u_history
    over the cylinder, or from the snapshot on the ball.

    Raises:
        ConfigurationError: k_r ≤ 0
    """
    if not k_r > 0:
        raise ConfigurationError(f"barrier level k(r) must be positive, got {k_r}")
    mask, values = _ball_values(u_snapshot, cylinder.ball)
    if u_history is not None:
        top, bottom = cylinder_extremes(u_history, cylinder)
    else:
        top, bottom = float(values.max()), float(values.min())
    if M_r is not None:
        top = float(M_r)
    spread = top - bottom if omega_r is None else float(omega_r)
    field_values = np.zeros(u_snapshot.grid.shape)
    field_values[mask] = np.log((spread + k_r) / (2 ** s1 * (top - values) + k_r))
    return u_snapshot.with_values(field_values)


def source_scale(q_history: Sequence[Snapshot], cylinder: Cylinder, s: float) -> float:
    """k(r) = r^(2 - 2/s) * sup_t ||q_I||_{s, B_r} (two space dimensions)."""
    grid = q_history[0].field.grid
    mask = ball_mask(grid, cylinder.ball)
    window = cylinder_window(q_history, cylinder)
    if not window:
        raise ResolutionError("empty time window for the source scale")
    peak = max(lp_norm(q_history[k].field.values[mask], grid, s) for k in window)
    return float(cylinder.radius ** (2.0 - 2.0 / s) * peak)


def alternative_bound_ratios(osc_series: Series, ell: float) -> Series:
    """(r, omega_r / r^(2 - 2/ell)) for r > 0."""
    exponent = 2.0 - 2.0 / ell
    return [(r, w / r ** exponent) for r, w in osc_series if r > 0]


def _tensor_oscillation(medium: MediumSpec, mask: np.ndarray) -> float:
    k = medium.permeability
    return max(float(np.ptp(entry[mask])) for entry in (k.d11, k.d12, k.d22))


def eta_indicator(
    u_history: Sequence[Snapshot],
    medium: MediumSpec,
    fluid: FluidSpec,
    cylinder: Cylinder,
) -> float:
    """eta(r) = sup_{Q_r} |mu(u(z0)) - mu(u)| + (osc_{B_r} K)^2."""
    i, j = cylinder.ball.center
    anchor = viscosity(u_history[cylinder.t_index].field.values[j, i], fluid)
    samples = cylinder_restrict(u_history, cylinder)
    values = np.concatenate([sample.values for sample in samples])
    drift = float(np.abs(anchor - viscosity(values, fluid)).max())
    mask = ball_mask(medium.grid, cylinder.ball)
    return drift + _tensor_oscillation(medium, mask) ** 2


@dataclass
class ComparisonResult:
    """Frozen-coefficient comparison on B_R.

    Attributes:
        gap: Discrete integral of |grad(phi - w)|^2 over the ball
        eta: eta(R) for the same ball
        phi: Comparison solution on the ball (NaN outside)
        w: Cut-off pressure p * zeta on the ball (NaN outside)
        boundary: Mask of ball cells carrying Dirichlet data
        iterations: Conjugate-gradient iterations
    """

    gap: float
    eta: float
    phi: np.ndarray
    w: np.ndarray
    boundary: np.ndarray
    iterations: int


def cutoff(grid: Grid2D, ball: Ball, rho: float) -> np.ndarray:
    """zeta = 1 on B_rho, decaying linearly to 0 at distance R, 0 beyond."""
    x, y = grid.cell_centers()
    cx, cy = grid.center_of(*ball.center)
    distance = np.hypot(x - cx, y - cy)
    if ball.radius == rho:
        return (distance <= rho + 1e-12 * grid.h).astype(np.float64)
    return np.clip((ball.radius - distance) / (ball.radius - rho), 0.0, 1.0)


def _interior_boundary(mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    padded = np.pad(mask, 1, constant_values=False)
    neighbours_inside = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    interior = mask & neighbours_inside
    return interior, mask & ~interior


def frozen_coefficient_comparison(
    p_snapshot: ScalarField,
    u_snapshot: ScalarField,
    medium: MediumSpec,
    fluid: FluidSpec,
    ball: Ball,
    rho: float,
    tol: float = PRESSURE_TOL,
    u_history: Optional[Sequence[Snapshot]] = None,
    t_index: int = -1,
) -> ComparisonResult:
    """Compare w = p zeta with its replacement under frozen coefficients.

    Solves -div(A grad phi) = 0 on the ball interior with
    A = (1/mu(u(x0))) * avg_{B_R} K and phi = w on the ball boundary cells,
    then measures the energy of phi - w. eta is evaluated on the cylinder
    of u_history when given, otherwise on the snapshot.

    Raises:
        ResolutionError: radius below one cell width or ball leaving the domain
        SolverError: the comparison solve did not converge
    """
    grid = p_snapshot.grid
    h = grid.h
    if ball.radius < h:
        raise ResolutionError(f"comparison ball needs at least 3 cells across (radius {ball.radius} < h={h})")
    _require_fit(grid, ball)
    if not 0.0 <= rho <= ball.radius:
        raise ConfigurationError(f"cutoff radius must lie in [0, R], got {rho}")

    mask = ball_mask(grid, ball)
    interior, boundary = _interior_boundary(mask)
    if not interior.any():
        raise ResolutionError("comparison ball has no interior cells")

    i0, j0 = ball.center
    lam = 1.0 / viscosity(u_snapshot.values[j0, i0], fluid)
    k = medium.permeability
    a11 = lam * float(k.d11[mask].mean())
    a12 = lam * float(k.d12[mask].mean())
    a22 = lam * float(k.d22[mask].mean())

    w = p_snapshot.values * cutoff(grid, ball, rho)
    number = -np.ones(grid.shape, dtype=np.int64)
    jj, ii = np.nonzero(interior)
    number[jj, ii] = np.arange(jj.size)

    stencil = [((1, 0), -a11), ((-1, 0), -a11), ((0, 1), -a22), ((0, -1), -a22)]
    if a12 != 0.0:
        stencil += [((1, 1), -0.5 * a12), ((-1, -1), -0.5 * a12), ((1, -1), 0.5 * a12), ((-1, 1), 0.5 * a12)]

    rows, cols, vals = [np.arange(jj.size)], [np.arange(jj.size)], [np.full(jj.size, 2.0 * (a11 + a22))]
    rhs = np.zeros(jj.size)
    for (di, dj), coeff in stencil:
        ni, nj = ii + di, jj + dj
        inside = (ni >= 0) & (ni < grid.nx) & (nj >= 0) & (nj < grid.ny)
        target = np.full(jj.size, -1)
        target[inside] = number[nj[inside], ni[inside]]
        unknown = target >= 0
        rows.append(np.nonzero(unknown)[0])
        cols.append(target[unknown])
        vals.append(np.full(int(unknown.sum()), coeff))
        known = inside & ~unknown
        rhs[known] -= coeff * w[nj[known], ni[known]]
    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(jj.size, jj.size),
    ).tocsr()

    result = projected_cg(matrix.dot, rhs, matrix.diagonal(), tol, max(1000, 10 * jj.size))
    if not result.converged:
        raise SolverError("comparison solve did not converge", result.residual_history)

    phi = np.full(grid.shape, np.nan)
    phi[boundary] = w[boundary]
    phi[jj, ii] = result.x
    error = np.where(mask, phi - w, 0.0)
    both_x = mask[:, :-1] & mask[:, 1:]
    both_y = mask[:-1, :] & mask[1:, :]
    gap = float(np.sum(np.diff(error, axis=1)[both_x] ** 2) + np.sum(np.diff(error, axis=0)[both_y] ** 2))

    if u_history is not None:
        eta = eta_indicator(u_history, medium, fluid, Cylinder(ball, t_index))
    else:
        eta = eta_indicator([Snapshot(0.0, u_snapshot)], medium, fluid, Cylinder(ball, 0))
    w_ball = np.where(mask, w, np.nan)
    return ComparisonResult(gap, eta, phi, w_ball, boundary, result.iterations)


@dataclass
class ClassifierThresholds:
    """theta1: boundedness factor; theta2: eta level (default theta2_fraction * eta at the largest radius); theta3: growth per halving."""

    theta1: float = THETA_BOUNDED
    theta2: Optional[float] = None
    theta2_fraction: float = THETA_ETA_FRACTION
    theta3: float = THETA_GROWTH


@dataclass
class Verdict:
    classification: str
    thresholds: Dict[str, float]
    reason: str


def classify_point(
    energy_series: Series,
    eta_series: Series,
    thresholds: Optional[ClassifierThresholds] = None,
) -> Verdict:
    """Regular / singular / inconclusive verdict from the gradient-energy and eta series.

    Singular: every halving of the radius multiplies the energy by at least
    theta3. Regular: the smallest-radius energy is at most theta1 times the
    median and eta at the smallest radius is at most theta2.
    """
    thresholds = thresholds or ClassifierThresholds()
    energies = sorted(energy_series)
    etas = sorted(eta_series)
    theta2 = thresholds.theta2
    if theta2 is None:
        theta2 = thresholds.theta2_fraction * etas[-1][1] if etas else 0.0
    used = {"theta1": thresholds.theta1, "theta2": theta2, "theta3": thresholds.theta3}

    if len(energies) < 3:
        return Verdict("inconclusive", used, "fewer than 3 radii")

    values = [value for _, value in energies]
    # values run from the smallest radius to the largest
    growth = [small / large if large > 0 else 0.0 for small, large in zip(values, values[1:])]
    if all(ratio >= thresholds.theta3 for ratio in growth):
        return Verdict("singular", used, f"energy grows by ≥ {thresholds.theta3} per halving")

    bounded = values[0] <= thresholds.theta1 * float(np.median(values))
    eta_small = etas[0][1] if etas else float("inf")
    if bounded and eta_small <= theta2:
        return Verdict("regular", used, "bounded energy and vanishing eta")
    reason = "energy not bounded" if not bounded else f"eta {eta_small:.3g} above {theta2:.3g}"
    return Verdict("inconclusive", used, reason)


@dataclass
class RegularityReport:
    """All diagnostic series for one space-time point."""

    point: Tuple[int, int, int]
    time: float
    gradient_energy_series: Series
    osc_series: Series
    alpha_fit: Optional[DecayFit]
    eta_series: Series
    level_set_fractions: List[Tuple[float, Optional[float]]]
    comparison_gaps: Series
    reverse_holder_series: Series = field(default_factory=list)
    alternative_ratios: Series = field(default_factory=list)
    source_scales: Series = field(default_factory=list)
    barrier_levels: Series = field(default_factory=list)
    barrier_peaks: Series = field(default_factory=list)
    classification: str = "inconclusive"
    thresholds: Dict[str, float] = field(default_factory=dict)
    reason: str = ""

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["point"] = list(self.point)
        data["alpha_fit"] = None if self.alpha_fit is None else asdict(self.alpha_fit)
        return data


def diagnose_point(
    u_history: Sequence[Snapshot],
    p_history: Sequence[Snapshot],
    point: Tuple[int, int, int],
    medium: MediumSpec,
    fluid: FluidSpec,
    sources: SourceSpec,
    ladder_count: int = 5,
    s: float = 3.0,
    s1: int = 1,
    ell: float = 2.0,
    thresholds: Optional[ClassifierThresholds] = None,
    ladder: Optional[Sequence[float]] = None,
) -> RegularityReport:
    """Evaluate every diagnostic at point (i, j, time index) and classify it.

    Radii whose balls leave the domain are dropped from the ladder.

    Raises:
        ResolutionError: fewer than 3 ladder radii fit around the point
    """
    grid = u_history[0].field.grid
    i, j, t_index = point
    t_index = t_index if t_index >= 0 else len(u_history) + t_index
    if ladder is None:
        ladder = dyadic_ladder(grid, ladder_count)
    radii = [r for r in ladder if ball_fits(grid, Ball((i, j), r))]
    if len(radii) < 3:
        raise ResolutionError(f"only {len(radii)} ladder radii fit around ({i}, {j})")

    u_now = u_history[t_index].field
    p_now = p_history[t_index].field
    energy = local_gradient_energy(p_history, (i, j), radii, t_index)
    osc = cylinder_oscillation(u_history, (i, j, t_index), radii)
    etas = [(r, eta_indicator(u_history, medium, fluid, Cylinder(Ball((i, j), r), t_index))) for r in radii]

    # M_r over Q_r feeds both the level sets and the barrier
    tops = [cylinder_extremes(u_history, Cylinder(Ball((i, j), r), t_index))[0] for r in radii]
    fractions = []
    for (r, omega), top in zip(osc, tops):
        try:
            fractions.append((r, level_set_fraction(u_now, Ball((i, j), r), s1, top, omega)))
        except DegenerateInputError:
            fractions.append((r, None))

    gaps = []
    for r in radii:
        try:
            result = frozen_coefficient_comparison(
                p_now, u_now, medium, fluid, Ball((i, j), r), 0.5 * r, u_history=u_history, t_index=t_index
            )
        except ResolutionError:
            continue
        gaps.append((r, result.gap))

    meyers = []
    for r in radii:
        if ball_fits(grid, Ball((i, j), 2 * r)):
            meyers.append((r, reverse_holder_diagnostic(p_now, Ball((i, j), r), s, sources)))

    q_history = [Snapshot(snap.time, sources.q_inject) for snap in u_history]
    scales = [(r, source_scale(q_history, Cylinder(Ball((i, j), r), t_index), s)) for r in radii]

    levels, peaks = [], []
    for (r, scale), (_, omega), top in zip(scales, osc, tops):
        cylinder = Cylinder(Ball((i, j), r), t_index)
        level = scale if scale > 0 else BARRIER_LEVEL_FLOOR
        barrier = log_barrier_field(u_now, cylinder, s1, level, top, omega)
        levels.append((r, level))
        peaks.append((r, float(barrier.values[ball_mask(grid, cylinder.ball)].max())))

    verdict = classify_point(energy, etas, thresholds)
    logger.info("Point (%d, %d, %d): %s (%s)", i, j, t_index, verdict.classification, verdict.reason)
    return RegularityReport(
        point=(i, j, t_index),
        time=u_history[t_index].time,
        gradient_energy_series=energy,
        osc_series=osc,
        alpha_fit=decay_exponent_fit(osc),
        eta_series=etas,
        level_set_fractions=fractions,
        comparison_gaps=gaps,
        reverse_holder_series=meyers,
        alternative_ratios=alternative_bound_ratios(osc, ell),
        source_scales=scales,
        barrier_levels=levels,
        barrier_peaks=peaks,
        classification=verdict.classification,
        thresholds=verdict.thresholds,
        reason=verdict.reason,
    )
