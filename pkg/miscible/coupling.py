"""
Time stepping by Picard iteration between the pressure solve and the
implicit transport step.

Each step iterates the map u_guess -> (pressure from u_guess, transport from
the step's initial state with that velocity) until successive iterates agree,
then advances time.
"""

import logging
import time as clock
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .coefficients import FluidSpec, MediumSpec, SourceSpec
from .config import PICARD_MAX_ITER, PICARD_TOL, PRESSURE_MAX_ITER, PRESSURE_TOL, TRANSPORT_TOL
from .errors import PicardConvergenceError
from .grid import FluxField, ScalarField, Snapshot, lp_norm
from .pressure import PressureSolution, solve_pressure
from .simconfig import Problem, SimulationConfig, build_problem
from .transport import (
    EnergyAccumulator,
    EnergyReport,
    FlowState,
    TransportStepReport,
    advance_concentration,
    suggest_dt,
)

logger = logging.getLogger(__name__)


@dataclass
class PicardState:
    """Iterates of one time step.

    Attributes:
        u_iterates: Concentration after each application of the map
        residuals: Distance between consecutive iterates
        contraction_ratios: residuals[k] / residuals[k-1]
        k_trunc: Truncation level used by the last transport solve
        converged: Final residual reached the tolerance
    """

    u_iterates: List[ScalarField] = field(default_factory=list)
    residuals: List[float] = field(default_factory=list)
    contraction_ratios: List[float] = field(default_factory=list)
    k_trunc: Optional[int] = None
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.residuals)

    def record(self, u_next: ScalarField, residual: float) -> None:
        if self.residuals and self.residuals[-1] > 0.0:
            self.contraction_ratios.append(residual / self.residuals[-1])
        self.u_iterates.append(u_next)
        self.residuals.append(residual)

    def summary(self) -> Dict[str, Any]:
        return {
            "iterations": self.iterations,
            "residuals": list(self.residuals),
            "contraction_ratios": list(self.contraction_ratios),
            "k_trunc": self.k_trunc,
            "converged": self.converged,
        }


@dataclass
class StepContext:
    """Everything one Picard sweep needs besides the current guess."""

    u_old: ScalarField
    medium: MediumSpec
    fluid: FluidSpec
    sources: SourceSpec
    dt: float
    k_trunc: Union[None, int, str] = "auto"
    pressure_tol: float = PRESSURE_TOL
    pressure_max_iter: int = PRESSURE_MAX_ITER
    cross_iterations: int = 0
    transport_tol: float = TRANSPORT_TOL
    cross_diffusion: str = "off"
    picard_tol: float = PICARD_TOL
    picard_max_iter: int = PICARD_MAX_ITER
    picard_norm: str = "sup"
    cached_pressure: Optional[PressureSolution] = None
    last_transport: Optional[TransportStepReport] = None
    pressure_solves: int = 0

    def distance(self, a: ScalarField, b: ScalarField) -> float:
        diff = a.values - b.values
        if self.picard_norm == "l2":
            return lp_norm(diff, a.grid, 2.0)
        return float(np.abs(diff).max())


def picard_step(u_guess: ScalarField, context: StepContext) -> Tuple[PressureSolution, ScalarField]:
    """One application of the fixed-point map.

    Pressure and velocity come from u_guess; transport always restarts from
    context.u_old. With a constant viscosity law the pressure does not depend
    on u_guess, so the first solve of the step is reused.
    """
    reuse = context.fluid.viscosity_law == "constant" and context.cached_pressure is not None
    if reuse:
        solution = context.cached_pressure
    else:
        warm = context.cached_pressure.p if context.cached_pressure is not None else None
        solution = solve_pressure(
            u_guess,
            context.medium,
            context.fluid,
            context.sources,
            tol=context.pressure_tol,
            max_iter=context.pressure_max_iter,
            cross_iterations=context.cross_iterations,
            x0=warm,
        )
        context.cached_pressure = solution
        context.pressure_solves += 1

    report = advance_concentration(
        context.u_old,
        solution.v,
        context.medium,
        context.fluid,
        context.sources,
        context.dt,
        k_trunc=context.k_trunc,
        cross_diffusion=context.cross_diffusion,
        u_lag=u_guess,
        tol=context.transport_tol,
    )
    context.last_transport = report
    return solution, report.u_new


def iterate_picard(context: StepContext, u_guess: Optional[ScalarField] = None) -> Tuple[PicardState, PressureSolution]:
    """Apply the map until the residual drops below tolerance or the cap is hit."""
    state = PicardState()
    u = u_guess if u_guess is not None else context.u_old
    solution = None
    for _ in range(context.picard_max_iter):
        solution, u_next = picard_step(u, context)
        state.record(u_next, context.distance(u_next, u))
        state.k_trunc = context.last_transport.k_active
        u = u_next
        if state.residuals[-1] <= context.picard_tol:
            state.converged = True
            break
    return state, solution


@dataclass
class StepRecord:
    """Per-step bookkeeping kept for every time step."""

    index: int
    time: float
    dt: float
    picard: Dict[str, Any]
    pressure_iterations: int
    pressure_solves: int
    mass_before: float
    mass_after: float
    source_mass: float
    injected: float
    produced: float
    min_u: float
    max_u: float
    energy: float

    @property
    def balance_error(self) -> float:
        return self.mass_after - self.mass_before - self.source_mass


@dataclass
class SimulationHistory:
    """Snapshots at the configured cadence plus per-step monitor series."""

    times: List[float] = field(default_factory=list)
    u: List[ScalarField] = field(default_factory=list)
    p: List[ScalarField] = field(default_factory=list)
    v: List[FluxField] = field(default_factory=list)
    steps: List[StepRecord] = field(default_factory=list)
    energy: Optional[EnergyReport] = None
    initial_mass: float = 0.0
    elapsed: float = 0.0

    def record_snapshot(self, t: float, u: ScalarField, p: ScalarField, v: FluxField) -> None:
        if self.times and t <= self.times[-1]:
            raise ValueError(f"snapshot time {t} does not advance past {self.times[-1]}")
        self.times.append(t)
        self.u.append(u)
        self.p.append(p)
        self.v.append(v)

    def u_history(self) -> List[Snapshot]:
        return [Snapshot(t, u) for t, u in zip(self.times, self.u)]

    def p_history(self) -> List[Snapshot]:
        return [Snapshot(t, p) for t, p in zip(self.times, self.p)]

    def flow_states(self) -> List[FlowState]:
        return [FlowState(t, u, v) for t, u, v in zip(self.times, self.u, self.v)]

    def cumulative_balance(self) -> Dict[str, float]:
        """Injected, produced and stored mass over the run with the relative mismatch."""
        injected = sum(step.injected for step in self.steps)
        produced = sum(step.produced for step in self.steps)
        final_mass = self.steps[-1].mass_after if self.steps else self.initial_mass
        stored = final_mass - self.initial_mass
        scale = max(abs(injected), abs(produced), abs(final_mass), abs(self.initial_mass), 1e-300)
        return {
            "injected": injected,
            "produced": produced,
            "stored": stored,
            "relative_error": abs(injected - produced - stored) / scale,
        }

    def monitor_rows(self) -> List[Dict[str, Any]]:
        return [
            {
                "step": step.index,
                "time": step.time,
                "dt": step.dt,
                "mass": step.mass_after,
                "min_u": step.min_u,
                "max_u": step.max_u,
                "balance_error": step.balance_error,
                "picard_iterations": step.picard["iterations"],
                "picard_residual": step.picard["residuals"][-1],
                "pressure_iterations": step.pressure_iterations,
                "energy": step.energy,
            }
            for step in self.steps
        ]

    def summary(self) -> Dict[str, Any]:
        ratios = [r for step in self.steps for r in step.picard["contraction_ratios"][-1:]]
        return {
            "steps": len(self.steps),
            "snapshots": len(self.times),
            "final_time": self.times[-1] if self.times else 0.0,
            "min_u": min((s.min_u for s in self.steps), default=None),
            "max_u": max((s.max_u for s in self.steps), default=None),
            "max_picard_iterations": max((s.picard["iterations"] for s in self.steps), default=0),
            "all_picard_converged": all(s.picard["converged"] for s in self.steps),
            "final_contraction_ratio": ratios[-1] if ratios else None,
            "energy": None if self.energy is None else {
                "storage_sup": self.energy.storage_sup,
                "dissipation": self.energy.dissipation,
                "total": self.energy.total,
            },
            "balance": self.cumulative_balance(),
        }


StepObserver = Callable[[StepRecord, StepContext, PressureSolution], None]


def _context(problem: Problem, config: SimulationConfig, u_old: ScalarField, sources: SourceSpec, dt: float) -> StepContext:
    sol = config.solvers
    return StepContext(
        u_old=u_old,
        medium=problem.medium,
        fluid=problem.fluid,
        sources=sources,
        dt=dt,
        k_trunc=sol.k_trunc,
        pressure_tol=sol.pressure_tol,
        pressure_max_iter=sol.pressure_max_iter,
        cross_iterations=sol.cross_iterations,
        transport_tol=sol.transport_tol,
        cross_diffusion=sol.cross_diffusion,
        picard_tol=sol.picard_tol,
        picard_max_iter=sol.picard_max_iter,
        picard_norm=sol.picard_norm,
    )


def _next_dt(config: SimulationConfig, v: FluxField, remaining: float) -> float:
    dt = config.time.dt
    if config.time.dt_policy == "cfl":
        suggested = suggest_dt(v, config.time.cfl_factor)
        if suggested is not None:
            dt = suggested
    # land exactly on t_final without a sliver step
    if dt >= remaining * (1.0 - 1e-9):
        return remaining
    return dt


def run_simulation(
    config: SimulationConfig,
    observer: Optional[StepObserver] = None,
    problem: Optional[Problem] = None,
) -> SimulationHistory:
    """Integrate from t = 0 to config.time.t_final.

    Args:
        config: Validated configuration
        observer: Called after every step with (record, context, pressure)
        problem: Prebuilt fields (built from config when omitted)

    Raises:
        PicardConvergenceError: a step hit the Picard cap in strict mode
        SolverError: pressure or transport solve failed
    """
    started = clock.perf_counter()
    problem = problem or build_problem(config)
    t_final = config.time.t_final
    u = problem.u0
    sources_now = problem.sources.at(0.0)

    initial = solve_pressure(
        u,
        problem.medium,
        problem.fluid,
        sources_now,
        tol=config.solvers.pressure_tol,
        max_iter=config.solvers.pressure_max_iter,
        cross_iterations=config.solvers.cross_iterations,
    )
    history = SimulationHistory()
    history.initial_mass = float(np.sum(problem.medium.porosity.values * u.values) * problem.grid.cell_area)
    history.record_snapshot(0.0, u, initial.p, initial.v)
    energy = EnergyAccumulator(problem.medium)
    energy.add(FlowState(0.0, u, initial.v))

    t = 0.0
    velocity = initial.v
    pressure = initial
    index = 0
    while t_final - t > 1e-12 * t_final:
        dt = _next_dt(config, velocity, t_final - t)
        t_next = t + dt if dt < t_final - t else t_final
        sources = problem.sources.at(t_next)
        context = _context(problem, config, u, sources, dt)
        context.cached_pressure = pressure if problem.fluid.viscosity_law != "constant" else None

        state, pressure = iterate_picard(context)
        if not state.converged:
            message = (
                f"Picard did not converge at t={t_next:.6g} after {state.iterations} iterations "
                f"(residual {state.residuals[-1]:.3e})"
            )
            if config.strict_mode:
                raise PicardConvergenceError(message, state.residuals)
            logger.warning(message)

        report = context.last_transport
        u = report.u_new
        velocity = pressure.v
        area = problem.grid.cell_area
        injected = float(dt * np.sum(sources.q_inject.values * sources.u_hat.values) * area)
        produced = float(dt * np.sum(sources.q_produce.values * u.values) * area)
        energy.add(FlowState(t_next, u, velocity))
        index += 1
        record = StepRecord(
            index=index,
            time=t_next,
            dt=dt,
            picard=state.summary(),
            pressure_iterations=pressure.iterations,
            pressure_solves=context.pressure_solves,
            mass_before=report.mass_before,
            mass_after=report.mass_after,
            source_mass=report.source_mass,
            injected=injected,
            produced=produced,
            min_u=report.min_u,
            max_u=report.max_u,
            energy=energy.report().total,
        )
        history.steps.append(record)
        if observer is not None:
            observer(record, context, pressure)

        t = t_next
        if index % config.time.snapshot_every == 0 or t >= t_final:
            history.record_snapshot(t, u, pressure.p, velocity)
        logger.info(
            "Step %d t=%.5g dt=%.3e picard=%d residual=%.2e",
            index,
            t,
            dt,
            state.iterations,
            state.residuals[-1],
        )

    history.energy = energy.report()
    history.elapsed = clock.perf_counter() - started
    logger.info("Simulation finished: %d steps in %.2fs", index, history.elapsed)
    return history


def truncation_study(config: SimulationConfig, k_values) -> List[Dict[str, float]]:
    """Final-state differences between fixed-k truncated runs and the untruncated run."""
    reference = run_simulation(replace(config, solvers=replace(config.solvers, k_trunc=None)))
    u_ref = reference.u[-1]
    rows = []
    for k in k_values:
        run = run_simulation(replace(config, solvers=replace(config.solvers, k_trunc=int(k))))
        diff = run.u[-1].values - u_ref.values
        rows.append({
            "k": int(k),
            "sup_difference": float(np.abs(diff).max()),
            "l2_difference": lp_norm(diff, u_ref.grid, 2.0),
        })
        logger.info("Truncation k=%d: sup difference %.3e", k, rows[-1]["sup_difference"])
    return rows
