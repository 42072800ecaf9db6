"""
Convergence studies with manufactured solutions.

pressure: p = cos(pi x) cos(pi y) on the unit square with K = I, mu = 1, so
the source is 2 pi^2 p, split into its positive (injection) and negative
(production) parts.

transport: steady u = cos(pi x) cos(pi y) under the cellular flow of the
stream function sin^2(pi x) sin^2(pi y) / pi, unit balanced sources with
u_hat = 0 and a forcing term that makes u exact; one backward-Euler step
from the exact field with a very large dt approximates the steady problem.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .coefficients import FluidSpec, MediumSpec, SourceSpec
from .errors import ConfigurationError
from .grid import FluxField, Grid2D, ScalarField, lp_norm
from .pressure import solve_pressure
from .simconfig import SimulationConfig
from .transport import advance_concentration

logger = logging.getLogger(__name__)

STUDIES = ("pressure", "transport")

# Molecular diffusion of the transport study; dispersivities are negligible
MMS_DIFFUSION = 0.05
MMS_DISPERSIVITY = 1e-12
MMS_DT = 1e8


@dataclass
class ConvergenceRow:
    n: int
    h: float
    error: float
    order: Optional[float] = None


@dataclass
class ConvergenceTable:
    """L2 errors per grid with observed orders between consecutive grids."""

    which: str
    rows: List[ConvergenceRow] = field(default_factory=list)

    @property
    def orders(self) -> List[float]:
        return [row.order for row in self.rows if row.order is not None]

    def to_dict(self) -> Dict:
        return {
            "which": self.which,
            "rows": [
                {"n": row.n, "h": row.h, "error": row.error, "order": row.order}
                for row in self.rows
            ],
        }

    def format(self) -> str:
        lines = [f"{'n':>6} {'h':>12} {'L2 error':>14} {'order':>8}"]
        for row in self.rows:
            order = "" if row.order is None else f"{row.order:.3f}"
            lines.append(f"{row.n:>6} {row.h:>12.5e} {row.error:>14.6e} {order:>8}")
        return "\n".join(lines)


def _cosine(x, y):
    return np.cos(np.pi * x) * np.cos(np.pi * y)


def pressure_error(n: int, tol: float = 1e-12) -> float:
    """L2 error of the pressure solve against the zero-mean cosine solution."""
    grid = Grid2D.unit_square(n)
    x, y = grid.cell_centers()
    rhs = 2.0 * np.pi ** 2 * _cosine(x, y)
    sources = SourceSpec(
        ScalarField(grid, np.maximum(rhs, 0.0)),
        ScalarField(grid, np.maximum(-rhs, 0.0)),
        ScalarField.constant(grid, 0.0),
    )
    medium = MediumSpec.uniform(grid)
    fluid = FluidSpec(viscosity_law="constant", mu0=1.0)
    solution = solve_pressure(ScalarField.constant(grid, 0.0), medium, fluid, sources, tol=tol)
    exact = _cosine(x, y)
    exact = exact - exact.mean()
    return lp_norm(solution.p.values - exact, grid, 2.0)


def _stream(x, y):
    return np.sin(np.pi * x) ** 2 * np.sin(np.pi * y) ** 2 / np.pi


def transport_error(n: int, tol: float = 1e-12) -> float:
    """L2 error of a near-steady transport step against the cosine solution."""
    grid = Grid2D.unit_square(n)
    x, y = grid.cell_centers()
    exact = _cosine(x, y)
    m = MMS_DIFFUSION

    vx = np.sin(np.pi * x) ** 2 * np.sin(2.0 * np.pi * y)
    vy = -np.sin(2.0 * np.pi * x) * np.sin(np.pi * y) ** 2
    ux = -np.pi * np.sin(np.pi * x) * np.cos(np.pi * y)
    uy = -np.pi * np.cos(np.pi * x) * np.sin(np.pi * y)
    # -m lap u + v.grad u + q_P u with q_P = 1 and div v = 0
    forcing = 2.0 * m * np.pi ** 2 * exact + vx * ux + vy * uy + exact

    one = ScalarField.constant(grid, 1.0)
    sources = SourceSpec(one, one, ScalarField.constant(grid, 0.0))
    fluid = FluidSpec(m=m, a=MMS_DISPERSIVITY, b=MMS_DISPERSIVITY, viscosity_law="constant")
    report = advance_concentration(
        ScalarField(grid, exact),
        FluxField.from_stream_function(grid, _stream),
        MediumSpec.uniform(grid),
        fluid,
        sources,
        MMS_DT,
        forcing=ScalarField(grid, forcing),
        tol=tol,
    )
    return lp_norm(report.u_new.values - exact, grid, 2.0)


def mms_convergence_study(config: SimulationConfig, grids: Optional[Sequence[int]] = None,
                          which: str = "pressure") -> ConvergenceTable:
    """Errors and observed orders over a list of grid sizes.

    Args:
        config: Supplies the default grid list and the pressure tolerance
        grids: Cells per side; defaults to config.mms.grids
        which: "pressure" or "transport"

    Raises:
        ConfigurationError: unknown study or empty grid list
    """
    if which not in STUDIES:
        raise ConfigurationError(f"unknown MMS study {which!r}; choose from {STUDIES}")
    grids = list(grids if grids is not None else config.mms.grids)
    if not grids:
        raise ConfigurationError("MMS study needs at least one grid")
    tol = min(config.solvers.pressure_tol, 1e-12)
    measure = pressure_error if which == "pressure" else transport_error

    table = ConvergenceTable(which)
    for n in grids:
        error = measure(int(n), tol)
        h = 1.0 / n
        order = None
        if table.rows:
            previous = table.rows[-1]
            order = math.log(previous.error / error) / math.log(previous.h / h)
        table.rows.append(ConvergenceRow(int(n), h, error, order))
        logger.info("MMS %s n=%d: error %.3e order %s", which, n, error, order)
    return table
