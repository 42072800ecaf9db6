"""
Uniform 2-D grid, cell and face field containers, and the discrete operators
shared by the solvers and the diagnostics.

Arrays are stored with shape (ny, nx) so that the row-major flattening used
in snapshot files is ``values.ravel()`` (index j*nx + i).
"""

from dataclasses import dataclass, field
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, ResolutionError

# Slack on squared distances in cell units for ball membership
_MEMBERSHIP_SLACK = 1e-9


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Grid2D:
    """Uniform cell-centered grid on a rectangle.

    Attributes:
        nx: Cells along x
        ny: Cells along y
        h: Cell width
        origin: Lower-left corner (x, y)
    """

    nx: int
    ny: int
    h: float
    origin: Tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ConfigurationError(f"cell counts must be integers, got {self.nx}x{self.ny}")
        if self.nx < 2 or self.ny < 2:
            raise ConfigurationError(f"grid needs at least 2x2 cells, got {self.nx}x{self.ny}")
        if not self.h > 0 or not np.isfinite(self.h):
            raise ConfigurationError(f"cell width must be positive, got {self.h}")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @classmethod
    def unit_square(cls, n: int) -> "Grid2D":
        """n x n grid covering [0, 1]^2."""
        return cls(n, n, 1.0 / n)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    @property
    def length_x(self) -> float:
        return self.nx * self.h

    @property
    def length_y(self) -> float:
        return self.ny * self.h

    @property
    def domain_area(self) -> float:
        return self.length_x * self.length_y

    def cell_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Coordinates of cell centers as two (ny, nx) arrays."""
        x = self.origin[0] + (np.arange(self.nx) + 0.5) * self.h
        y = self.origin[1] + (np.arange(self.ny) + 0.5) * self.h
        return np.meshgrid(x, y)

    def x_face_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Midpoints of vertical faces, shape (ny, nx + 1)."""
        x = self.origin[0] + np.arange(self.nx + 1) * self.h
        y = self.origin[1] + (np.arange(self.ny) + 0.5) * self.h
        return np.meshgrid(x, y)

    def y_face_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Midpoints of horizontal faces, shape (ny + 1, nx)."""
        x = self.origin[0] + (np.arange(self.nx) + 0.5) * self.h
        y = self.origin[1] + np.arange(self.ny + 1) * self.h
        return np.meshgrid(x, y)

    def vertices(self) -> Tuple[np.ndarray, np.ndarray]:
        """Cell corner coordinates, shape (ny + 1, nx + 1)."""
        x = self.origin[0] + np.arange(self.nx + 1) * self.h
        y = self.origin[1] + np.arange(self.ny + 1) * self.h
        return np.meshgrid(x, y)

    def center_of(self, i: int, j: int) -> Tuple[float, float]:
        return (self.origin[0] + (i + 0.5) * self.h, self.origin[1] + (j + 0.5) * self.h)

    def locate(self, x: float, y: float) -> Tuple[int, int]:
        """Index (i, j) of the cell containing point (x, y)."""
        i = int(np.clip(np.floor((x - self.origin[0]) / self.h), 0, self.nx - 1))
        j = int(np.clip(np.floor((y - self.origin[1]) / self.h), 0, self.ny - 1))
        return i, j


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Cell-centered scalar values; immutable once built."""

    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.size != self.grid.size:
            raise ConfigurationError(
                f"field has {values.size} values, grid expects {self.grid.size}"
            )
        values = values.reshape(self.grid.shape)
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("field values must be finite")
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def constant(cls, grid: Grid2D, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: Grid2D, fn) -> "ScalarField":
        """Sample fn(x, y) at cell centers."""
        x, y = grid.cell_centers()
        return cls(grid, np.broadcast_to(fn(x, y), grid.shape))

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)

    def ravel(self) -> np.ndarray:
        """Row-major flat view (index j*nx + i)."""
        return self.values.ravel()

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_area)

    def mean(self) -> float:
        return float(self.values.mean())

    def __eq__(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class FluxField:
    """Face-centered normal fluxes with homogeneous Neumann boundary.

    x_faces has shape (ny, nx + 1) and y_faces (ny + 1, nx); entries are
    normal Darcy fluxes per unit face length, positive along +x / +y.
    """

    grid: Grid2D
    x_faces: np.ndarray
    y_faces: np.ndarray

    def __post_init__(self):
        nx, ny = self.grid.nx, self.grid.ny
        fx = np.asarray(self.x_faces, dtype=np.float64)
        fy = np.asarray(self.y_faces, dtype=np.float64)
        if fx.shape != (ny, nx + 1) or fy.shape != (ny + 1, nx):
            raise ConfigurationError(
                f"face arrays must be {(ny, nx + 1)} and {(ny + 1, nx)}, "
                f"got {fx.shape} and {fy.shape}"
            )
        if not (np.all(np.isfinite(fx)) and np.all(np.isfinite(fy))):
            raise ConfigurationError("fluxes must be finite")
        if np.any(fx[:, [0, -1]] != 0.0) or np.any(fy[[0, -1], :] != 0.0):
            raise ConfigurationError("boundary fluxes must be exactly zero (no-flow boundary)")
        object.__setattr__(self, "x_faces", _frozen(fx))
        object.__setattr__(self, "y_faces", _frozen(fy))

    @classmethod
    def zeros(cls, grid: Grid2D) -> "FluxField":
        return cls(grid, np.zeros((grid.ny, grid.nx + 1)), np.zeros((grid.ny + 1, grid.nx)))

    @classmethod
    def from_samples(cls, grid: Grid2D, fx, fy) -> "FluxField":
        """Build from face samples, zeroing the boundary faces."""
        fx = np.array(fx, dtype=np.float64, copy=True)
        fy = np.array(fy, dtype=np.float64, copy=True)
        fx[:, [0, -1]] = 0.0
        fy[[0, -1], :] = 0.0
        return cls(grid, fx, fy)

    @classmethod
    def from_stream_function(cls, grid: Grid2D, psi) -> "FluxField":
        """Discretely divergence-free fluxes from a stream function psi(x, y).

        psi must vanish on the boundary; face fluxes are differences of psi
        at the face end points, so the divergence telescopes to zero.
        """
        xv, yv = grid.vertices()
        corner = psi(xv, yv)
        fx = (corner[1:, :] - corner[:-1, :]) / grid.h
        fy = -(corner[:, 1:] - corner[:, :-1]) / grid.h
        return cls.from_samples(grid, fx, fy)

    def scaled(self, factor: float) -> "FluxField":
        return FluxField(self.grid, self.x_faces * factor, self.y_faces * factor)

    def max_abs(self) -> float:
        return float(max(np.abs(self.x_faces).max(), np.abs(self.y_faces).max()))

    def __eq__(self, other):
        if not isinstance(other, FluxField):
            return NotImplemented
        return (
            self.grid == other.grid
            and np.array_equal(self.x_faces, other.x_faces)
            and np.array_equal(self.y_faces, other.y_faces)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SymTensor2Field:
    """Cell-centered symmetric 2x2 tensors stored as (d11, d12, d22)."""

    grid: Grid2D
    d11: np.ndarray
    d12: np.ndarray
    d22: np.ndarray

    def __post_init__(self):
        for name in ("d11", "d12", "d22"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=np.float64), self.grid.shape)
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"tensor entry {name} must be finite")
            object.__setattr__(self, name, _frozen(arr))

    @classmethod
    def isotropic(cls, grid: Grid2D, value: float) -> "SymTensor2Field":
        return cls(grid, np.full(grid.shape, float(value)), np.zeros(grid.shape), np.full(grid.shape, float(value)))

    def eigenvalues(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-cell (smallest, largest) eigenvalues."""
        half_trace = 0.5 * (self.d11 + self.d22)
        radius = np.hypot(0.5 * (self.d11 - self.d22), self.d12)
        return half_trace - radius, half_trace + radius

    def has_cross_terms(self) -> bool:
        return bool(np.any(self.d12 != 0.0))

    def scaled(self, factor) -> "SymTensor2Field":
        """Multiply every entry by a scalar or a per-cell array."""
        return SymTensor2Field(self.grid, self.d11 * factor, self.d12 * factor, self.d22 * factor)


@dataclass(frozen=True)
class Ball:
    """Cells whose centers lie within distance radius of the center cell's."""

    center: Tuple[int, int]
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ResolutionError(f"ball radius must be nonnegative, got {self.radius}")
        object.__setattr__(self, "center", (int(self.center[0]), int(self.center[1])))


@dataclass(frozen=True)
class Cylinder:
    """Ball times the window (t0 - r^2/2, t0 + r^2/2] around history index t_index."""

    ball: Ball
    t_index: int

    @property
    def radius(self) -> float:
        return self.ball.radius


class Snapshot(NamedTuple):
    time: float
    field: ScalarField


class CylinderSample(NamedTuple):
    t_index: int
    time: float
    values: np.ndarray


@dataclass
class GradientField:
    """Per-cell gradient components."""

    gx: np.ndarray
    gy: np.ndarray

    def magnitude_squared(self) -> np.ndarray:
        return self.gx ** 2 + self.gy ** 2

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.gx, self.gy)


def disk_offsets(radius_cells: float) -> Tuple[np.ndarray, np.ndarray]:
    """Integer offsets (di, dj) with di^2 + dj^2 <= radius_cells^2."""
    reach = int(np.floor(radius_cells + _MEMBERSHIP_SLACK))
    d = np.arange(-reach, reach + 1)
    di, dj = np.meshgrid(d, d)
    inside = di ** 2 + dj ** 2 <= radius_cells ** 2 + _MEMBERSHIP_SLACK
    return di[inside], dj[inside]


def radius_in_cells(grid: Grid2D, radius: float) -> float:
    return radius / grid.h


def ball_mask(grid: Grid2D, ball: Ball) -> np.ndarray:
    """Boolean (ny, nx) mask of ball members, clipped to the domain."""
    i0, j0 = ball.center
    ii, jj = np.meshgrid(np.arange(grid.nx), np.arange(grid.ny))
    rc = radius_in_cells(grid, ball.radius)
    return (ii - i0) ** 2 + (jj - j0) ** 2 <= rc ** 2 + _MEMBERSHIP_SLACK


def ball_fits(grid: Grid2D, ball: Ball) -> bool:
    """True when no member of the unclipped ball falls outside the grid."""
    i0, j0 = ball.center
    reach = int(np.floor(radius_in_cells(grid, ball.radius) + _MEMBERSHIP_SLACK))
    return (
        i0 - reach >= 0
        and j0 - reach >= 0
        and i0 + reach <= grid.nx - 1
        and j0 + reach <= grid.ny - 1
    )


def dyadic_ladder(grid: Grid2D, count: int, include_zero: bool = False) -> List[float]:
    """Radii h, 2h, 4h, ... (optionally preceded by the single-cell radius 0)."""
    radii = [grid.h * 2 ** k for k in range(count)]
    return ([0.0] if include_zero else []) + radii


def domain_ladder(grid: Grid2D) -> List[float]:
    """Radii 0, h, 2h, ... up to the first one whose ball covers the domain."""
    diameter = np.hypot(grid.nx, grid.ny)
    radii = [0.0]
    k = 0
    while True:
        radii.append(grid.h * 2 ** k)
        if 2 ** k >= diameter:
            return radii
        k += 1


def gradient(f: ScalarField) -> GradientField:
    """Cell gradient: central differences inside, second-order one-sided at the boundary."""
    gy, gx = np.gradient(f.values, f.grid.h, edge_order=2)
    return GradientField(gx, gy)


def divergence(flux: FluxField) -> ScalarField:
    """Net outflux per unit cell area."""
    h = flux.grid.h
    div = (np.diff(flux.x_faces, axis=1) + np.diff(flux.y_faces, axis=0)) / h
    return ScalarField(flux.grid, div)


def cell_velocity(flux: FluxField) -> Tuple[np.ndarray, np.ndarray]:
    """Cell velocity reconstructed by averaging opposite face fluxes."""
    vx = 0.5 * (flux.x_faces[:, :-1] + flux.x_faces[:, 1:])
    vy = 0.5 * (flux.y_faces[:-1, :] + flux.y_faces[1:, :])
    return vx, vy


def ball_average(f: ScalarField, ball: Ball) -> float:
    """Arithmetic mean of f over the (domain-clipped) ball members."""
    mask = ball_mask(f.grid, ball)
    if not mask.any():
        raise ResolutionError(f"ball {ball} has no member cells")
    return float(f.values[mask].mean())


def lp_norm(values: np.ndarray, grid: Grid2D, ell: float) -> float:
    """Discrete L^ell norm (sum |v|^ell h^2)^(1/ell); ell may be inf."""
    values = np.abs(np.asarray(values, dtype=np.float64))
    if np.isinf(ell):
        return float(values.max()) if values.size else 0.0
    return float((np.sum(values ** ell) * grid.cell_area) ** (1.0 / ell))


def as_history(times: Sequence[float], fields: Sequence[ScalarField]) -> List[Snapshot]:
    """Pair times with fields, checking that times strictly increase."""
    times = [float(t) for t in times]
    if len(times) != len(fields):
        raise ConfigurationError("history needs one time per field")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ConfigurationError("history times must be strictly increasing")
    return [Snapshot(t, f) for t, f in zip(times, fields)]


def cylinder_window(history: Sequence[Snapshot], cylinder: Cylinder) -> List[int]:
    """History indices whose time lies in (t0 - r^2/2, t0 + r^2/2]."""
    if not history:
        raise ResolutionError("history is empty")
    if not -len(history) <= cylinder.t_index < len(history):
        raise ResolutionError(f"time index {cylinder.t_index} outside history")
    t0 = history[cylinder.t_index].time
    half = 0.5 * cylinder.radius ** 2
    eps = 1e-12 * max(1.0, abs(t0))
    anchor = cylinder.t_index % len(history)
    return [
        k for k, snap in enumerate(history)
        if k == anchor or t0 - half + eps < snap.time <= t0 + half + eps
    ]


def cylinder_restrict(history: Sequence[Snapshot], cylinder: Cylinder) -> List[CylinderSample]:
    """All (time, ball values) samples inside the parabolic cylinder."""
    indices = cylinder_window(history, cylinder)
    if not indices:
        raise ResolutionError(f"cylinder {cylinder} does not intersect the history")
    mask = ball_mask(history[0].field.grid, cylinder.ball)
    if not mask.any():
        raise ResolutionError(f"ball {cylinder.ball} has no member cells")
    return [CylinderSample(k, history[k].time, history[k].field.values[mask]) for k in indices]
