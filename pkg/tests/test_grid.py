"""
Unit tests for the grid, field containers and discrete operators.
"""

import numpy as np
import pytest

from miscible.errors import ConfigurationError, ResolutionError
from miscible.grid import (
    Ball,
    Cylinder,
    FluxField,
    Grid2D,
    ScalarField,
    as_history,
    ball_average,
    ball_fits,
    ball_mask,
    cell_velocity,
    cylinder_restrict,
    cylinder_window,
    divergence,
    domain_ladder,
    dyadic_ladder,
    gradient,
    lp_norm,
)


class TestGrid2D:
    """Grid construction and geometry."""

    def test_rejects_degenerate_grids(self):
        """Grids below 2x2 or with non-positive h are rejected."""
        with pytest.raises(ConfigurationError):
            Grid2D(1, 4, 0.25)
        with pytest.raises(ConfigurationError):
            Grid2D(4, 4, 0.0)

    def test_cell_centers(self):
        """Centers sit at origin + (i + 1/2) h."""
        grid = Grid2D(4, 3, 0.5, (1.0, -1.0))
        x, y = grid.cell_centers()
        assert x.shape == (3, 4)
        assert x[0, 0] == pytest.approx(1.25)
        assert y[2, 0] == pytest.approx(0.25)
        assert grid.center_of(3, 2) == pytest.approx((2.75, 0.25))

    def test_locate_inverts_center_of(self):
        """locate() returns the cell holding a center."""
        grid = Grid2D.unit_square(8)
        assert grid.locate(*grid.center_of(5, 2)) == (5, 2)


class TestFields:
    """Immutability and validation of the field containers."""

    def test_scalar_field_is_read_only(self, grid16):
        """Values cannot be modified in place."""
        field = ScalarField.constant(grid16, 0.5)
        with pytest.raises(ValueError):
            field.values[0, 0] = 1.0

    def test_scalar_field_size_checked(self, grid16):
        """A value count that does not match the grid is rejected."""
        with pytest.raises(ConfigurationError):
            ScalarField(grid16, np.zeros(10))

    def test_row_major_layout(self):
        """Flat index is j*nx + i."""
        grid = Grid2D(3, 2, 1.0)
        field = ScalarField.from_function(grid, lambda x, y: 10 * y + x)
        assert field.ravel()[1 * 3 + 2] == pytest.approx(10 * 1.5 + 2.5)

    def test_flux_boundary_must_vanish(self, grid16):
        """Nonzero boundary fluxes are rejected."""
        fx = np.zeros((16, 17))
        fx[3, 0] = 1.0
        with pytest.raises(ConfigurationError):
            FluxField(grid16, fx, np.zeros((17, 16)))

    def test_from_samples_zeroes_boundary(self, grid16, rng):
        """Boundary faces are set to zero when building from samples."""
        flux = FluxField.from_samples(grid16, rng.normal(size=(16, 17)), rng.normal(size=(17, 16)))
        assert np.all(flux.x_faces[:, [0, -1]] == 0.0)
        assert np.all(flux.y_faces[[0, -1], :] == 0.0)


class TestOperators:
    """Gradient, divergence, averages and norms."""

    def test_gradient_of_constant_is_zero(self, grid16):
        """Constant fields have zero gradient."""
        g = gradient(ScalarField.constant(grid16, 3.0))
        assert np.all(g.gx == 0.0)
        assert np.all(g.gy == 0.0)

    def test_gradient_exact_on_affine(self, grid16):
        """Affine fields are differentiated exactly, boundary cells included."""
        g = gradient(ScalarField.from_function(grid16, lambda x, y: 2.0 * x - 3.0 * y + 1.0))
        np.testing.assert_allclose(g.gx, 2.0, atol=1e-12)
        np.testing.assert_allclose(g.gy, -3.0, atol=1e-12)

    def test_gradient_second_order(self):
        """Error on cos(pi x) cos(pi y) drops by about 4 per halving of h."""
        errors = []
        for n in (16, 32):
            grid = Grid2D.unit_square(n)
            g = gradient(ScalarField.from_function(grid, lambda x, y: np.cos(np.pi * x) * np.cos(np.pi * y)))
            x, y = grid.cell_centers()
            exact = -np.pi * np.sin(np.pi * x) * np.cos(np.pi * y)
            errors.append(np.abs(g.gx - exact).max())
        assert errors[0] / errors[1] > 3.0

    def test_divergence_telescopes(self, grid16, rng):
        """The integral of the divergence vanishes for no-flow boundaries."""
        flux = FluxField.from_samples(grid16, rng.normal(size=(16, 17)), rng.normal(size=(17, 16)))
        total = divergence(flux).integral()
        assert abs(total) <= 1e-13 * flux.max_abs()

    def test_stream_function_is_divergence_free(self, grid16):
        """Fluxes from a stream function have zero discrete divergence."""
        flux = FluxField.from_stream_function(
            grid16, lambda x, y: np.sin(np.pi * x) ** 2 * np.sin(np.pi * y) ** 2
        )
        assert np.abs(divergence(flux).values).max() <= 1e-12

    def test_cell_velocity_of_uniform_flux(self, grid16):
        """Interior cells of a uniform interior flux see that velocity."""
        fx = np.ones((16, 17))
        flux = FluxField.from_samples(grid16, fx, np.zeros((17, 16)))
        vx, vy = cell_velocity(flux)
        np.testing.assert_allclose(vx[:, 1:-1], 1.0)
        np.testing.assert_allclose(vx[:, 0], 0.5)
        assert np.all(vy == 0.0)

    def test_lp_norm(self, grid16):
        """Discrete norms of a constant field."""
        ones = np.ones(grid16.shape)
        assert lp_norm(ones, grid16, 2.0) == pytest.approx(1.0)
        assert lp_norm(-3.0 * ones, grid16, np.inf) == 3.0


class TestBalls:
    """Ball membership, ladders and averages."""

    def test_membership_counts(self, grid16):
        """Radius h holds the center and its four neighbours."""
        assert ball_mask(grid16, Ball((8, 8), grid16.h)).sum() == 5
        assert ball_mask(grid16, Ball((8, 8), 0.0)).sum() == 1

    def test_membership_reflection_symmetric(self, grid16):
        """Mirroring the center mirrors the mask."""
        mask = ball_mask(grid16, Ball((3, 5), 3.0 * grid16.h))
        mirrored = ball_mask(grid16, Ball((12, 5), 3.0 * grid16.h))
        np.testing.assert_array_equal(mask[:, ::-1], mirrored)

    def test_clipped_ball_does_not_fit(self, grid16):
        """Balls reaching past the boundary are clipped and reported as not fitting."""
        assert not ball_fits(grid16, Ball((1, 8), 2.0 * grid16.h))
        assert ball_fits(grid16, Ball((2, 8), 2.0 * grid16.h))

    def test_ball_average_shift_invariant(self, grid16):
        """Averages of a translation-invariant pattern agree at shifted centers."""
        field = ScalarField.from_function(grid16, lambda x, y: np.cos(2 * np.pi * 4 * x))
        first = ball_average(field, Ball((4, 8), 2 * grid16.h))
        second = ball_average(field, Ball((8, 8), 2 * grid16.h))
        assert first == pytest.approx(second, abs=1e-12)

    def test_ball_average_empty(self, grid16):
        """A ball with no member cells raises ResolutionError."""
        with pytest.raises(ResolutionError):
            ball_average(ScalarField.constant(grid16, 1.0), Ball((-10, -10), grid16.h))

    def test_ladders(self, grid16):
        """Dyadic ladder doubles from h; the domain ladder starts at 0 and covers the grid."""
        h = grid16.h
        assert dyadic_ladder(grid16, 3) == pytest.approx([h, 2 * h, 4 * h])
        ladder = domain_ladder(grid16)
        assert ladder[0] == 0.0
        assert ladder[-1] / h >= np.hypot(16, 16)


class TestCylinders:
    """Time windows and restriction to parabolic cylinders."""

    def _history(self, grid):
        times = np.arange(101) * 0.01
        return as_history(times, [ScalarField.constant(grid, t) for t in times])

    def test_window_around_middle_time(self, grid16):
        """r = 0.2 around t = 0.5 with dt = 0.01 picks 0.49, 0.50, 0.51, 0.52."""
        history = self._history(grid16)
        window = cylinder_window(history, Cylinder(Ball((8, 8), 0.2), 50))
        assert window == [49, 50, 51, 52]

    def test_restrict_returns_ball_values(self, grid16):
        """Each sample carries the ball values at that time."""
        history = self._history(grid16)
        samples = cylinder_restrict(history, Cylinder(Ball((8, 8), grid16.h), 50))
        assert samples[0].values.shape == (5,)
        assert samples[-1].time == pytest.approx(0.5)

    def test_zero_radius_keeps_anchor(self, grid16):
        """A zero-radius cylinder still holds its own time level."""
        history = self._history(grid16)
        assert cylinder_window(history, Cylinder(Ball((8, 8), 0.0), -1)) == [100]

    def test_history_times_must_increase(self, grid16):
        """Non-increasing times are rejected."""
        field = ScalarField.constant(grid16, 0.0)
        with pytest.raises(ConfigurationError):
            as_history([0.0, 0.0], [field, field])
