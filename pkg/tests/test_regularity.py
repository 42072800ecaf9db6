"""
Unit tests for the regularity diagnostics and the point classifier.
"""

import json

import numpy as np
import pytest

from miscible.coefficients import FluidSpec, MediumSpec, checkerboard_permeability, five_spot_sources
from miscible.config import BARRIER_LEVEL_FLOOR
from miscible.coupling import run_simulation
from miscible.errors import ConfigurationError, DegenerateInputError, ResolutionError
from miscible.grid import Ball, Cylinder, Grid2D, ScalarField, as_history, ball_mask, domain_ladder
from miscible.pressure import solve_pressure
from miscible.regularity import (
    ClassifierThresholds,
    alternative_bound_ratios,
    classify_point,
    cutoff,
    cylinder_oscillation,
    decay_exponent_fit,
    diagnose_point,
    eta_indicator,
    fefferman_stein_ratio,
    frozen_coefficient_comparison,
    hardy_littlewood_ratio,
    level_set_fraction,
    local_gradient_energy,
    log_barrier_field,
    maximal_function,
    sharp_function,
    source_scale,
)
from miscible.simconfig import build_problem


def _brute_maximal(f):
    grid = f.grid
    out = np.abs(f.values).copy()
    for j in range(grid.ny):
        for i in range(grid.nx):
            for r in domain_ladder(grid)[1:]:
                mask = ball_mask(grid, Ball((i, j), r))
                out[j, i] = max(out[j, i], np.abs(f.values[mask]).mean())
    return out


def _brute_sharp(f):
    grid = f.grid
    out = np.zeros(grid.shape)
    for r in domain_ladder(grid)[1:]:
        osc = np.zeros(grid.shape)
        for j in range(grid.ny):
            for i in range(grid.nx):
                values = f.values[ball_mask(grid, Ball((i, j), r))]
                osc[j, i] = np.abs(values - values.mean()).mean()
        for j in range(grid.ny):
            for i in range(grid.nx):
                centers = ball_mask(grid, Ball((i, j), r))
                out[j, i] = max(out[j, i], osc[centers].max())
    return out


def _oracle_field(grid, seed):
    """Normal, Cauchy or sparse-spike values depending on the seed."""
    rng = np.random.default_rng(seed)
    kind = seed % 3
    if kind == 0:
        values = rng.normal(size=grid.shape)
    elif kind == 1:
        values = rng.standard_cauchy(size=grid.shape)
    else:
        values = np.zeros(grid.shape)
        count = int(rng.integers(1, 6))
        rows = rng.integers(0, grid.ny, count)
        cols = rng.integers(0, grid.nx, count)
        values[rows, cols] = rng.uniform(-10.0, 10.0, count)
    return ScalarField(grid, values)


def _static_history(field, count=4, dt=0.001):
    return as_history([k * dt for k in range(count)], [field] * count)


@pytest.fixture
def spike_field(grid16):
    """Ones at (8, 8), zeros elsewhere."""
    values = np.zeros(grid16.shape)
    values[8, 8] = 1.0
    return ScalarField(grid16, values)


class TestMaximalAndSharp:
    """Ladder maximal function and sharp function against direct evaluation."""

    @pytest.mark.parametrize("seed", range(24))
    def test_maximal_matches_brute_force(self, grid16, seed):
        """Convolution means equal explicit ball averages on smooth, heavy-tailed and sparse fields."""
        f = _oracle_field(grid16, seed)
        atol = 1e-12 * np.abs(f.values).max()
        np.testing.assert_allclose(maximal_function(f).values, _brute_maximal(f), rtol=1e-12, atol=atol)

    @pytest.mark.parametrize("seed", range(24))
    def test_sharp_matches_brute_force(self, grid16, seed):
        """Shifted-slice oscillations equal explicit ball oscillations on smooth, heavy-tailed and sparse fields."""
        f = _oracle_field(grid16, seed)
        atol = 1e-12 * np.abs(f.values).max()
        np.testing.assert_allclose(sharp_function(f).values, _brute_sharp(f), rtol=1e-12, atol=atol)

    def test_constant_field(self, grid16):
        """M c = |c|, c# = 0, the Hardy-Littlewood ratio is 1 and the Fefferman-Stein ratio is undefined."""
        f = ScalarField.constant(grid16, -2.5)
        np.testing.assert_allclose(maximal_function(f).values, 2.5, rtol=1e-12)
        np.testing.assert_allclose(sharp_function(f).values, 0.0, atol=1e-14)
        assert hardy_littlewood_ratio(f, 2.0) == pytest.approx(1.0, rel=1e-12)
        with pytest.raises(DegenerateInputError):
            fefferman_stein_ratio(f, 2.0)

    def test_homogeneity(self, grid16, rng):
        """Both operators scale with |lambda|."""
        f = ScalarField(grid16, rng.normal(size=grid16.shape))
        scaled = f.with_values(-3.0 * f.values)
        np.testing.assert_allclose(maximal_function(scaled).values, 3.0 * maximal_function(f).values, rtol=1e-12)
        np.testing.assert_allclose(sharp_function(scaled).values, 3.0 * sharp_function(f).values, rtol=1e-12)

    def test_ratios_on_random_field(self, grid16, rng):
        """The maximal function dominates |f| and the sharp ratio is finite."""
        f = ScalarField(grid16, rng.normal(size=grid16.shape))
        assert hardy_littlewood_ratio(f, 2.0) >= 1.0
        assert 0.0 < fefferman_stein_ratio(f, 4.0) < np.inf
        with pytest.raises(ConfigurationError):
            fefferman_stein_ratio(f, 1.0)


class TestOscillationDecay:
    """Cylinder oscillation and the fitted decay exponent."""

    @pytest.mark.parametrize("alpha", [0.25, 0.5, 0.75])
    def test_power_profile_exponent(self, alpha):
        """|x - x0|^alpha has oscillation r^alpha on dyadic balls."""
        grid = Grid2D.unit_square(64)
        cx, cy = grid.center_of(32, 32)
        u = ScalarField.from_function(grid, lambda x, y: np.hypot(x - cx, y - cy) ** alpha)
        ladder = [grid.h * 2 ** k for k in range(5)]
        series = cylinder_oscillation(_static_history(u), (32, 32, -1), ladder)
        np.testing.assert_allclose([w for _, w in series], np.array(ladder) ** alpha, rtol=1e-12)
        fit = decay_exponent_fit(series)
        assert fit.alpha == pytest.approx(alpha, abs=1e-10)
        assert fit.points == 5

    def test_fit_needs_three_positive_points(self):
        """Zero oscillations are dropped and fewer than three points give no fit."""
        assert decay_exponent_fit([(0.1, 0.0), (0.2, 0.5), (0.4, 1.0)]) is None

    def test_alternative_bound_ratios(self):
        """omega_r / r^(2 - 2/ell), skipping r = 0."""
        assert alternative_bound_ratios([(0.0, 1.0), (0.5, 0.25)], 2.0) == [(0.5, 0.5)]


class TestLevelSetAndBarrier:
    """Level-set fraction and the logarithmic barrier."""

    def test_fraction_counts_strictly_above(self, grid16, spike_field):
        """One of five cells lies above the midpoint."""
        assert level_set_fraction(spike_field, Ball((8, 8), grid16.h), 1) == pytest.approx(0.2)

    def test_fraction_affine_invariant(self, grid16, spike_field):
        """a u + b with a > 0 has the same fraction."""
        moved = spike_field.with_values(3.0 * spike_field.values + 2.0)
        ball = Ball((8, 8), 2 * grid16.h)
        assert level_set_fraction(moved, ball, 2) == level_set_fraction(spike_field, ball, 2)

    def test_threshold_value_excluded(self, grid16, spike_field):
        """Cells equal to the threshold are not counted."""
        fraction = level_set_fraction(spike_field, Ball((8, 8), grid16.h), 1, M_r=1.0, omega_r=2.0)
        assert fraction == pytest.approx(0.2)

    def test_flat_ball_degenerate(self, grid16):
        """Zero oscillation has no level sets."""
        with pytest.raises(DegenerateInputError):
            level_set_fraction(ScalarField.constant(grid16, 0.3), Ball((8, 8), grid16.h), 1)

    def test_barrier_values(self, grid16, spike_field):
        """ln((omega + k) / (2^s1 (M - u) + k)) at the peak and its neighbours, 0 outside."""
        v = log_barrier_field(spike_field, Cylinder(Ball((8, 8), grid16.h), 0), 2, 0.1)
        assert isinstance(v, ScalarField)
        assert v.values[8, 8] == pytest.approx(np.log(1.1 / 0.1))
        assert v.values[8, 9] == pytest.approx(np.log(1.1 / 4.1))
        assert v.values[0, 0] == 0.0

    def test_barrier_explicit_levels(self, grid16):
        """With M = 1, omega = 1, k = 0.1 and s1 = 3, a cell at u = M - 1/2 gives ln(1.1 / 4.1)."""
        values = np.zeros(grid16.shape)
        values[8, 8] = 0.5
        u = ScalarField(grid16, values)
        v = log_barrier_field(u, Cylinder(Ball((8, 8), grid16.h), 0), 3, 0.1, M_r=1.0, omega_r=1.0)
        assert v.values[8, 8] == pytest.approx(np.log(1.1 / 4.1))
        assert v.values[8, 9] == pytest.approx(np.log(1.1 / 8.1))

    def test_barrier_levels_from_cylinder(self, grid16, spike_field):
        """M and omega come from the whole cylinder, not just the current snapshot."""
        faded = spike_field.with_values(0.5 * spike_field.values)
        history = as_history([0.0, 0.001, 0.002, 0.003], [spike_field, spike_field, spike_field, faded])
        cylinder = Cylinder(Ball((8, 8), grid16.h), 3)
        v = log_barrier_field(faded, cylinder, 1, 0.1, u_history=history)
        assert v.values[8, 8] == pytest.approx(np.log(1.1 / 1.1))
        assert v.values[8, 9] == pytest.approx(np.log(1.1 / 2.1))

    def test_barrier_level_positive(self, grid16, spike_field):
        """k(r) ≤ 0 is rejected."""
        with pytest.raises(ConfigurationError):
            log_barrier_field(spike_field, Cylinder(Ball((8, 8), grid16.h), 0), 1, 0.0)

    def test_source_scale(self, grid16):
        """r^(2 - 2/s) times the L^s norm of q_I over the ball."""
        q = ScalarField.constant(grid16, 2.0)
        r = grid16.h
        scale = source_scale(_static_history(q), Cylinder(Ball((8, 8), r), -1), 3.0)
        expected = r ** (2 - 2 / 3) * (5 * 8.0 * grid16.cell_area) ** (1 / 3)
        assert scale == pytest.approx(expected, rel=1e-12)


class TestEta:
    """Coefficient-oscillation indicator."""

    def test_constant_data(self, grid16, uniform_medium, default_fluid):
        """Constant u and K give eta = 0."""
        history = _static_history(ScalarField.constant(grid16, 0.3))
        assert eta_indicator(history, uniform_medium, default_fluid, Cylinder(Ball((8, 8), 0.2), -1)) == 0.0

    def test_checkerboard_jump(self, grid16, default_fluid):
        """A checkerboard of jump J contributes J^2."""
        medium = MediumSpec(ScalarField.constant(grid16, 1.0), checkerboard_permeability(grid16, 1.0, 0.5), 1.0, 1.0)
        history = _static_history(ScalarField.constant(grid16, 0.3))
        eta = eta_indicator(history, medium, default_fluid, Cylinder(Ball((8, 8), 2 * grid16.h), -1))
        assert eta == pytest.approx(0.25)

    def test_viscosity_drift(self, grid16, uniform_medium):
        """Varying u adds the largest viscosity change from the center value."""
        fluid = FluidSpec(mobility_ratio=16.0)
        values = np.zeros(grid16.shape)
        values[8, 9] = 1.0
        history = _static_history(ScalarField(grid16, values))
        eta = eta_indicator(history, uniform_medium, fluid, Cylinder(Ball((8, 8), grid16.h), -1))
        assert eta == pytest.approx(fluid.mu0 - fluid.mu0 / 16.0)


class TestComparison:
    """Frozen-coefficient comparison on a ball."""

    def test_cutoff_profile(self, grid16):
        """One inside rho, zero beyond R."""
        zeta = cutoff(grid16, Ball((8, 8), 4 * grid16.h), 2 * grid16.h)
        assert zeta[8, 8] == 1.0
        assert zeta[8, 13] == 0.0
        assert 0.0 < zeta[8, 11] < 1.0

    def test_affine_pressure_has_no_gap(self, grid16, uniform_medium, default_fluid):
        """An affine pressure is already discretely harmonic."""
        p = ScalarField.from_function(grid16, lambda x, y: 2.0 * x - y)
        u = ScalarField.constant(grid16, 0.0)
        ball = Ball((8, 8), 4 * grid16.h)
        result = frozen_coefficient_comparison(p, u, uniform_medium, default_fluid, ball, ball.radius, tol=1e-13)
        assert result.gap <= 1e-20
        assert result.eta == 0.0

    def test_boundary_data_and_harmonicity(self, grid16, uniform_medium, default_fluid, rng):
        """phi equals w on the boundary cells and satisfies the five-point stencil inside."""
        p = ScalarField(grid16, rng.normal(size=grid16.shape))
        u = ScalarField.constant(grid16, 0.0)
        ball = Ball((8, 8), 4 * grid16.h)
        result = frozen_coefficient_comparison(p, u, uniform_medium, default_fluid, ball, 2 * grid16.h, tol=1e-13)
        np.testing.assert_array_equal(result.phi[result.boundary], result.w[result.boundary])

        phi = result.phi
        interior = ball_mask(grid16, ball) & ~result.boundary
        jj, ii = np.nonzero(interior)
        residual = 4 * phi[jj, ii] - phi[jj, ii + 1] - phi[jj, ii - 1] - phi[jj + 1, ii] - phi[jj - 1, ii]
        assert np.abs(residual).max() <= 1e-10 * np.nanmax(np.abs(phi))
        assert result.gap > 0.0

    def test_gap_grows_with_heterogeneity(self, grid32, default_fluid):
        """Larger checkerboard jumps move the pressure further from the frozen-coefficient solution."""
        sources = five_spot_sources(grid32, 1.0, 1.0, 0.125)
        u = ScalarField.constant(grid32, 0.0)
        ball = Ball((16, 16), 4 * grid32.h)
        gaps, etas = [], []
        for jump in (0.1, 0.5, 1.0):
            k = checkerboard_permeability(grid32, 1.0, jump, block=2)
            medium = MediumSpec(ScalarField.constant(grid32, 1.0), k, 1.0, 1.0)
            p = solve_pressure(u, medium, default_fluid, sources, tol=1e-12).p
            result = frozen_coefficient_comparison(p, u, medium, default_fluid, ball, ball.radius, tol=1e-13)
            gaps.append(result.gap)
            etas.append(result.eta)
        assert gaps[0] < gaps[1] < gaps[2]
        assert etas == pytest.approx([0.01, 0.25, 1.0])

    def test_radius_below_cell(self, grid16, uniform_medium, default_fluid):
        """Balls narrower than one cell are unresolved."""
        field = ScalarField.constant(grid16, 0.0)
        with pytest.raises(ResolutionError):
            frozen_coefficient_comparison(field, field, uniform_medium, default_fluid, Ball((8, 8), 0.5 * grid16.h), 0.0)

    def test_cutoff_radius_range(self, grid16, uniform_medium, default_fluid):
        """rho must lie in [0, R]."""
        field = ScalarField.constant(grid16, 0.0)
        ball = Ball((8, 8), 2 * grid16.h)
        with pytest.raises(ConfigurationError):
            frozen_coefficient_comparison(field, field, uniform_medium, default_fluid, ball, 3 * grid16.h)


class TestClassifier:
    """Verdicts from synthetic series."""

    def _radii(self):
        return [2.0 ** -k for k in (6, 5, 4, 3)]

    def test_regular(self):
        """Flat energy with vanishing eta is regular."""
        radii = self._radii()
        verdict = classify_point([(r, 1.0) for r in radii], [(r, 0.0) for r in radii])
        assert verdict.classification == "regular"

    def test_singular(self):
        """Energy of a r^0.4 pressure grows by 2^1.2 per halving."""
        radii = self._radii()
        verdict = classify_point([(r, r ** -1.2) for r in radii], [(r, 0.0) for r in radii])
        assert verdict.classification == "singular"

    def test_unbounded_but_not_growing(self):
        """A single spike at the smallest radius is inconclusive."""
        radii = self._radii()
        energy = [(radii[0], 5.0)] + [(r, 1.0) for r in radii[1:]]
        verdict = classify_point(energy, [(r, 0.0) for r in radii])
        assert verdict.classification == "inconclusive"
        assert "not bounded" in verdict.reason

    def test_eta_above_threshold(self):
        """Bounded energy with large eta at the smallest radius is inconclusive."""
        radii = self._radii()
        verdict = classify_point([(r, 1.0) for r in radii], [(r, 4 * r) for r in radii])
        assert verdict.classification == "inconclusive"
        assert verdict.thresholds["theta2"] == pytest.approx(0.1 * 4 * radii[-1])

    def test_explicit_thresholds(self):
        """A user theta2 overrides the fraction rule."""
        radii = self._radii()
        thresholds = ClassifierThresholds(theta2=1.0)
        verdict = classify_point([(r, 1.0) for r in radii], [(r, 4 * r) for r in radii], thresholds)
        assert verdict.classification == "regular"

    def test_too_few_radii(self):
        """Two radii are not enough."""
        verdict = classify_point([(0.1, 1.0), (0.2, 1.0)], [])
        assert verdict.classification == "inconclusive"


class TestGradientEnergy:
    """Local gradient energy over cylinders."""

    def test_linear_pressure(self, grid16):
        """|grad p|^2 is 1 at every radius for p = x."""
        history = _static_history(ScalarField.from_function(grid16, lambda x, y: x))
        series = local_gradient_energy(history, (8, 8), [grid16.h, 2 * grid16.h])
        assert [value for _, value in series] == pytest.approx([1.0, 1.0])

    def test_ball_must_fit(self, grid16):
        """Radii reaching past the boundary are unresolved."""
        history = _static_history(ScalarField.constant(grid16, 0.0))
        with pytest.raises(ResolutionError):
            local_gradient_energy(history, (1, 8), [4 * grid16.h])


class TestDiagnosePoint:
    """Full report on a short simulated run."""

    @pytest.fixture
    def run(self, short_config):
        return build_problem(short_config), run_simulation(short_config)

    def test_report_structure(self, run):
        """Every series has one entry per fitting radius and the report is JSON-ready."""
        problem, history = run
        report = diagnose_point(history.u_history(), history.p_history(), (8, 8, -1),
                                problem.medium, problem.fluid, problem.sources, ladder_count=3)
        assert report.point == (8, 8, len(history.u) - 1)
        assert len(report.gradient_energy_series) == 3
        assert len(report.osc_series) == 3
        assert len(report.eta_series) == 3
        assert report.classification in ("regular", "singular", "inconclusive")
        data = json.loads(json.dumps(report.to_dict()))
        assert data["point"] == [8, 8, len(history.u) - 1]

    def test_corner_point_unresolved(self, run):
        """Too few radii fit around a corner cell."""
        problem, history = run
        with pytest.raises(ResolutionError):
            diagnose_point(history.u_history(), history.p_history(), (0, 0, -1),
                           problem.medium, problem.fluid, problem.sources)

    def test_snapshot_histories(self, grid16, uniform_medium, default_fluid, five_spot16):
        """Static smooth data with uniform coefficients is classified regular."""
        p = ScalarField.from_function(grid16, lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y))
        u = ScalarField.from_function(grid16, lambda x, y: 0.5 * x)
        fluid = FluidSpec(viscosity_law="constant")
        report = diagnose_point(_static_history(u), _static_history(p), (8, 8, -1), uniform_medium, fluid,
                                five_spot16, ladder_count=3)
        assert report.classification == "regular"

    def test_levels_come_from_cylinder(self, grid16, default_fluid, five_spot16, spike_field):
        """A spike that fades at the last snapshot keeps M = 1 and omega = 1 from the earlier ones."""
        faded = spike_field.with_values(0.5 * spike_field.values)
        u_history = as_history([0.0, 0.001, 0.002, 0.003], [spike_field, spike_field, spike_field, faded])
        p = ScalarField.from_function(grid16, lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y))
        medium = MediumSpec.uniform(grid16)
        report = diagnose_point(u_history, _static_history(p), (8, 8, -1), medium, default_fluid, five_spot16,
                                ladder_count=3)
        assert [w for _, w in report.osc_series] == pytest.approx([1.0, 1.0, 1.0])
        # threshold 1 - 1/2 is not exceeded by the faded peak
        assert [fraction for _, fraction in report.level_set_fractions] == [0.0, 0.0, 0.0]
        assert [level for _, level in report.barrier_levels] == [BARRIER_LEVEL_FLOOR] * 3
        assert [peak for _, peak in report.barrier_peaks] == pytest.approx([0.0, 0.0, 0.0], abs=1e-12)
        assert len(report.to_dict()["barrier_peaks"]) == 3

    def test_barrier_level_from_injection(self, grid16, default_fluid):
        """Where q_I is active the barrier level is the source scale itself."""
        sources = five_spot_sources(grid16, 1.0, 1.0, 0.5)
        u = ScalarField.from_function(grid16, lambda x, y: 0.5 * x)
        p = ScalarField.from_function(grid16, lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y))
        report = diagnose_point(_static_history(u), _static_history(p), (4, 4, -1), MediumSpec.uniform(grid16),
                                default_fluid, sources, ladder_count=3)
        assert report.barrier_levels == report.source_scales
        assert all(level > 0 for _, level in report.barrier_levels)

    @pytest.mark.slow
    def test_gradient_blowup_is_singular(self):
        """p = |x - x0|^0.4 has gradient energy growing faster than 1.5 per halving."""
        grid = Grid2D.unit_square(64)
        x0 = (32 + 0.5) * grid.h
        p = ScalarField.from_function(grid, lambda x, y: np.hypot(x - x0, y - x0) ** 0.4)
        u = ScalarField.from_function(grid, lambda x, y: 0.5 * x)
        report = diagnose_point(_static_history(u), _static_history(p), (32, 32, -1), MediumSpec.uniform(grid),
                                FluidSpec(viscosity_law="constant"), five_spot_sources(grid, 1.0, 1.0, 0.125),
                                ladder_count=4)
        energies = [value for _, value in sorted(report.gradient_energy_series)]
        assert all(small > 1.5 * large for small, large in zip(energies, energies[1:]))
        assert report.classification == "singular"

    @pytest.mark.slow
    def test_permeability_jump_not_regular(self):
        """At a corner of a high-contrast checkerboard eta stays at (osc K)^2 and the point is never regular."""
        grid = Grid2D.unit_square(64)
        medium = MediumSpec(ScalarField.constant(grid, 1.0), checkerboard_permeability(grid, 1.0, 99.0, 8), 1.0, 1.0)
        fluid = FluidSpec(viscosity_law="constant")
        sources = five_spot_sources(grid, 1.0, 1.0, 0.125)
        u = ScalarField.constant(grid, 0.0)
        p = solve_pressure(u, medium, fluid, sources, tol=1e-8).p
        report = diagnose_point(_static_history(u), _static_history(p), (32, 32, -1), medium, fluid, sources,
                                ladder_count=4)
        assert min(eta for _, eta in report.eta_series) == pytest.approx(99.0 ** 2)
        assert report.classification != "regular"
