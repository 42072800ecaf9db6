"""
Exception hierarchy for the simulator and diagnostics.
"""


class MiscibleError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(MiscibleError):
    """Invalid parameters or inputs.

    Attributes:
        hypothesis: Name of the violated model hypothesis (e.g. "H4"), if any
    """

    def __init__(self, message: str, hypothesis: str = None):
        if hypothesis and f"({hypothesis})" not in message:
            message = f"({hypothesis}) {message}"
        super().__init__(message)
        self.hypothesis = hypothesis


class ResolutionError(MiscibleError):
    """A ball or cylinder is below the grid resolution or outside the domain."""


class DegenerateInputError(MiscibleError):
    """Input for which a diagnostic is undefined (e.g. a constant field)."""


class SolverError(MiscibleError):
    """A linear or nonlinear solve failed.

    Attributes:
        residual_history: Residual norms recorded before the failure
    """

    def __init__(self, message: str, residual_history=None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])

    @property
    def residual(self) -> float:
        """Last recorded residual, or NaN when none was recorded."""
        return self.residual_history[-1] if self.residual_history else float("nan")


class PressureSolveError(SolverError):
    """Conjugate gradients hit the iteration cap."""


class TransportSolveError(SolverError):
    """The implicit transport system could not be solved to tolerance."""


class PicardConvergenceError(SolverError):
    """Picard iteration hit its cap without reaching tolerance."""


class SnapshotError(MiscibleError):
    """Malformed snapshot file."""


class ChecksumMismatchError(SnapshotError):
    """Snapshot values do not match the stored checksum."""


class InvariantViolation(MiscibleError):
    """A monitored invariant failed.

    Attributes:
        invariant: Name of the failed check
        value: Measured value that exceeded the tolerance
    """

    def __init__(self, invariant: str, value: float, message: str = ""):
        super().__init__(message or f"{invariant} violated (measured {value:.3e})")
        self.invariant = invariant
        self.value = value
