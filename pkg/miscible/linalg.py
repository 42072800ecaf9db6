"""
Preconditioned conjugate gradients restricted to a subspace.

The pure-Neumann pressure operator is singular with the constants in its
kernel; iterating on the zero-mean subspace (right-hand side, residuals,
preconditioned residuals and iterates all projected) makes it SPD there.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class CGResult:
    """Outcome of a conjugate-gradient solve.

    Attributes:
        x: Final iterate
        iterations: Iterations performed
        residual_history: Relative residual norms, starting with the initial one
        converged: Whether the tolerance was reached
        residual_norm: Relative residual recomputed from x at the end
    """

    x: np.ndarray
    iterations: int
    residual_history: List[float] = field(default_factory=list)
    converged: bool = False
    residual_norm: float = 0.0


def zero_mean(vector: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto vectors with zero arithmetic mean."""
    return vector - vector.mean()


def _identity(vector: np.ndarray) -> np.ndarray:
    return vector


def projected_cg(
    matvec: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    diag: Optional[np.ndarray] = None,
    tol: float = 1e-10,
    max_iter: int = 10000,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    x0: Optional[np.ndarray] = None,
) -> CGResult:
    """Solve A x = b with Jacobi-preconditioned CG inside a projected subspace.

    Args:
        matvec: Function computing A @ x
        b: Right-hand side
        diag: Diagonal of A for Jacobi preconditioning; None for plain CG
        tol: Relative residual target ||r|| / ||b||
        max_iter: Iteration cap
        project: Projection onto the solution subspace (identity if None)
        x0: Initial guess

    Returns:
        CGResult; the caller decides how to treat non-convergence
    """
    project = project or _identity
    started = time.perf_counter()

    b = project(np.asarray(b, dtype=np.float64))
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return CGResult(np.zeros_like(b), 0, [0.0], True, 0.0)

    x = np.zeros_like(b) if x0 is None else project(np.array(x0, dtype=np.float64))
    r = project(b - matvec(x))

    def precondition(res):
        return project(res / diag) if diag is not None else res

    z = precondition(r)
    direction = z.copy()
    rz = float(r @ z)
    history = [float(np.linalg.norm(r)) / b_norm]
    converged = history[0] <= tol
    iterations = 0

    while not converged and iterations < max_iter:
        a_dir = project(matvec(direction))
        curvature = float(direction @ a_dir)
        if curvature <= 0.0:
            logger.warning("CG stopped: non-positive curvature %.3e at iteration %d", curvature, iterations)
            break
        alpha = rz / curvature
        x += alpha * direction
        r -= alpha * a_dir
        iterations += 1
        history.append(float(np.linalg.norm(r)) / b_norm)
        if history[-1] <= tol:
            converged = True
            break
        z = precondition(r)
        rz_next = float(r @ z)
        direction = z + (rz_next / rz) * direction
        rz = rz_next

    x = project(x)
    true_residual = float(np.linalg.norm(project(b - matvec(x)))) / b_norm
    elapsed = time.perf_counter() - started
    logger.debug(
        "CG finished",
        extra={
            "iterations": iterations,
            "residual": true_residual,
            "converged": converged,
            "seconds": elapsed,
        },
    )
    return CGResult(x, iterations, history, converged, true_residual)
