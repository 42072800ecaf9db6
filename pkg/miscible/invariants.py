"""
Invariant monitors for the verify command.

Each check can be switched off through ``verify.checks`` in the scenario, and
each passes its inputs through the fault hook (MISCIBLE_INJECT_FAULT) so the
test suite can prove the check is able to fail.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np

from .coefficients import FluidSpec, SourceSpec, dispersion_components, ellipticity_bounds
from .config import (
    COMPATIBILITY_TOL,
    CONSERVATION_FACTOR,
    CUMULATIVE_BALANCE_RTOL,
    DISPERSION_SAMPLES,
    INVARIANT_NAMES,
    MASS_BALANCE_RTOL,
    MAX_PRINCIPLE_SLACK,
    get_injected_faults,
)
from .errors import ConfigurationError, InvariantViolation, SnapshotError
from .grid import FluxField, ScalarField, cell_velocity, divergence
from .pressure import PressureSolution
from .simconfig import SimulationConfig, build_problem
from .snapshots import load_snapshot_series

logger = logging.getLogger(__name__)

# Relative slack for the eigenvalue sandwich
SPECTRAL_RTOL = 1e-12


@dataclass
class CheckResult:
    """Worst value seen by one check against its tolerance."""

    name: str
    worst: float = 0.0
    tolerance: float = 0.0
    evaluations: int = 0
    passed: bool = True
    detail: str = ""

    def observe(self, value: float, tolerance: float, detail: str = "") -> None:
        self.evaluations += 1
        if self.evaluations == 1 or value / tolerance > self.worst / self.tolerance:
            self.worst, self.tolerance = value, tolerance
        if value > tolerance and self.passed:
            self.passed = False
            self.detail = detail or f"{value:.3e} > {tolerance:.3e}"


@dataclass
class VerifyResult:
    """Outcome of a verify run."""

    checks: Dict[str, CheckResult] = field(default_factory=dict)
    faults: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks.values())

    @property
    def failures(self) -> List[str]:
        return [name for name, check in self.checks.items() if not check.passed]

    def raise_for_failures(self) -> None:
        """Raise InvariantViolation naming the first failed check."""
        for name in self.failures:
            check = self.checks[name]
            raise InvariantViolation(name, check.worst, f"{name} violated: {check.detail}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "passed": self.passed,
            "failures": self.failures,
            "faults": list(self.faults),
            "checks": {
                name: {
                    "passed": check.passed,
                    "worst": check.worst,
                    "tolerance": check.tolerance,
                    "evaluations": check.evaluations,
                    "detail": check.detail,
                }
                for name, check in self.checks.items()
            },
        }


class InvariantSuite:
    """Runs the enabled checks; usable as a run_simulation step observer."""

    def __init__(self, checks: Iterable[str] = INVARIANT_NAMES, faults: Optional[Iterable[str]] = None,
                 pressure_tol: float = 1e-10, seed: int = 0):
        checks = tuple(checks)
        unknown = set(checks) - set(INVARIANT_NAMES)
        if unknown:
            raise ConfigurationError(f"unknown verify checks: {sorted(unknown)}")
        self.enabled = checks
        self.faults = set(get_injected_faults() if faults is None else faults)
        self.pressure_tol = pressure_tol
        self.seed = seed
        self.result = VerifyResult(
            {name: CheckResult(name) for name in checks},
            sorted(self.faults & set(checks)),
        )
        if self.result.faults:
            logger.warning("Fault injection active for: %s", ", ".join(self.result.faults))

    def _on(self, name: str) -> bool:
        return name in self.enabled

    def _faulty(self, name: str) -> bool:
        return name in self.faults

    def check_bounds(self, u: ScalarField, where: str = "") -> None:
        if not self._on("max_principle"):
            return
        values = np.array(u.values)
        if self._faulty("max_principle"):
            values.flat[0] = 1.0 + 1e-3
        excess = max(-float(values.min()), float(values.max()) - 1.0, 0.0)
        self.result.checks["max_principle"].observe(
            excess, MAX_PRINCIPLE_SLACK, f"u leaves [0, 1] by {excess:.3e}{where}"
        )

    def check_step_balance(self, mass_before: float, mass_after: float, source_mass: float,
                           injected: float, produced: float, where: str = "") -> None:
        if not self._on("mass_balance"):
            return
        if self._faulty("mass_balance"):
            mass_after = mass_after + 1e-6 * max(abs(mass_after), 1.0)
        scale = max(abs(mass_before), abs(mass_after), abs(injected), abs(produced), 1e-300)
        error = abs(mass_after - mass_before - source_mass) / scale
        self.result.checks["mass_balance"].observe(
            error, MASS_BALANCE_RTOL, f"relative step balance error {error:.3e}{where}"
        )

    def check_cumulative_balance(self, balance: Dict[str, float]) -> None:
        if not self._on("mass_balance"):
            return
        error = balance["relative_error"]
        if self._faulty("mass_balance"):
            error += 1e-6
        self.result.checks["mass_balance"].observe(
            error, CUMULATIVE_BALANCE_RTOL, f"cumulative balance error {error:.3e}"
        )

    def check_pressure_mean(self, p: ScalarField, where: str = "") -> None:
        if not self._on("zero_mean_pressure"):
            return
        values = p.values + 1.0 if self._faulty("zero_mean_pressure") else p.values
        grid = p.grid
        total = abs(float(values.sum()) * grid.cell_area) / grid.domain_area
        self.result.checks["zero_mean_pressure"].observe(
            total, 1e-10, f"|mean p| = {total:.3e}{where}"
        )

    def check_conservation(self, v: FluxField, sources: SourceSpec, where: str = "") -> None:
        if not self._on("conservation"):
            return
        if self._faulty("conservation"):
            x_faces = np.array(v.x_faces)
            x_faces[0, 1] += 1.0
            v = FluxField(v.grid, x_faces, v.y_faces)
        net = sources.net()
        defect = float(np.abs(divergence(v).values - net).max())
        tolerance = CONSERVATION_FACTOR * self.pressure_tol * max(1.0, float(np.abs(net).max()))
        self.result.checks["conservation"].observe(
            defect, tolerance, f"max |div v - (q_I - q_P)| = {defect:.3e}{where}"
        )

    def _dispersion(self, vx, vy, fluid: FluidSpec, k, where: str) -> None:
        d11, d12, d22 = dispersion_components(vx, vy, fluid, k)
        if self._faulty("dispersion_bounds"):
            d11, d12, d22 = 1.01 * d11, 1.01 * d12, 1.01 * d22
        half_trace = 0.5 * (d11 + d22)
        radius = np.hypot(0.5 * (d11 - d22), d12)
        lo, hi = ellipticity_bounds(np.hypot(vx, vy), fluid, k)
        below = (lo - (half_trace - radius)) / lo
        above = ((half_trace + radius) - hi) / hi
        worst = max(float(below.max()), float(above.max()), 0.0)
        self.result.checks["dispersion_bounds"].observe(
            worst, SPECTRAL_RTOL, f"eigenvalue outside the spectral sandwich by {worst:.3e}{where}"
        )

    def check_dispersion_samples(self, fluid: FluidSpec, samples: int = DISPERSION_SAMPLES) -> None:
        """Spectral sandwich of D and D_k on random velocities and truncation levels."""
        if not self._on("dispersion_bounds"):
            return
        rng = np.random.default_rng(self.seed)
        speed = 10.0 ** rng.uniform(-6.0, 3.0, samples)
        angle = rng.uniform(0.0, 2.0 * np.pi, samples)
        vx, vy = speed * np.cos(angle), speed * np.sin(angle)
        self._dispersion(vx, vy, fluid, None, " (untruncated samples)")
        for k in np.unique(rng.integers(1, 100, 8)):
            self._dispersion(vx, vy, fluid, int(k), f" (samples, k={k})")

    def check_dispersion_field(self, v: FluxField, fluid: FluidSpec, k, where: str = "") -> None:
        if not self._on("dispersion_bounds"):
            return
        vx, vy = cell_velocity(v)
        self._dispersion(vx.ravel(), vy.ravel(), fluid, k, where)

    def check_sources(self, sources: SourceSpec) -> None:
        if not self._on("source_compatibility"):
            return
        q_i = np.array(sources.q_inject.values)
        if self._faulty("source_compatibility"):
            q_i = 2.0 * q_i
            q_i.flat[0] += 1.0
        grid = sources.grid
        imbalance = abs(float((q_i - sources.q_produce.values).sum()) * grid.cell_area) / grid.domain_area
        self.result.checks["source_compatibility"].observe(
            imbalance, COMPATIBILITY_TOL, f"|∫(q_I - q_P)| / |Ω| = {imbalance:.3e}"
        )

    def check_pressure(self, solution: PressureSolution, sources: SourceSpec, where: str = "") -> None:
        self.check_pressure_mean(solution.p, where)
        self.check_conservation(solution.v, sources, where)

    def __call__(self, record, context, pressure: PressureSolution) -> None:
        where = f" at step {record.index} (t={record.time:.6g})"
        report = context.last_transport
        self.check_bounds(report.u_new, where)
        self.check_step_balance(
            report.mass_before, report.mass_after, report.source_mass, record.injected, record.produced, where
        )
        self.check_pressure(pressure, context.sources, where)
        self.check_dispersion_field(pressure.v, context.fluid, report.k_active, where)


def verify_config(config: SimulationConfig, faults: Optional[Iterable[str]] = None) -> VerifyResult:
    """Run the scenario with every enabled check attached."""
    from .coupling import run_simulation

    problem = build_problem(config)
    suite = InvariantSuite(config.verify.checks, faults, config.solvers.pressure_tol, config.seed)
    suite.check_sources(problem.sources)
    suite.check_dispersion_samples(problem.fluid)
    suite.check_bounds(problem.u0, " in the initial state")
    history = run_simulation(config, observer=suite, problem=problem)
    suite.check_cumulative_balance(history.cumulative_balance())
    _log_result(suite.result)
    return suite.result


def verify_snapshots(directory, checks: Iterable[str] = INVARIANT_NAMES,
                     faults: Optional[Iterable[str]] = None) -> VerifyResult:
    """Check stored snapshots: bounds of u files and zero mean of p files.

    Other checks need the run itself and are skipped here.

    Raises:
        SnapshotError: no snapshots found or a file is malformed
    """
    directory = Path(directory)
    usable = [name for name in checks if name in ("max_principle", "zero_mean_pressure")]
    suite = InvariantSuite(usable, faults)
    u_files = load_snapshot_series(directory, "u")
    p_files = load_snapshot_series(directory, "p")
    if not u_files and not p_files:
        raise SnapshotError(f"no snapshots found in {directory}")
    for snap in u_files:
        suite.check_bounds(snap.field, f" in u snapshot t={snap.time:.6g}")
    for snap in p_files:
        suite.check_pressure_mean(snap.field, f" in p snapshot t={snap.time:.6g}")
    _log_result(suite.result)
    return suite.result


def _log_result(result: VerifyResult) -> None:
    for name, check in result.checks.items():
        if check.passed:
            logger.info("Check %s passed (worst %.3e, %d evaluations)", name, check.worst, check.evaluations)
        else:
            logger.error("Check %s FAILED: %s", name, check.detail)
