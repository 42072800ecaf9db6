"""
Miscible displacement simulator

A finite-volume solver for single-phase miscible displacement in porous
media, with a toolkit of regularity diagnostics for the computed fields.

Architecture:
- grid.py: Structured grid, field containers, balls and parabolic cylinders
- coefficients.py: Porosity, permeability, viscosity, sources and dispersion
- linalg.py: Projected Jacobi-preconditioned conjugate gradients
- pressure.py: Two-point pressure solve, Darcy fluxes, Meyers diagnostic
- transport.py: Implicit upwind concentration step and energy monitor
- coupling.py: Picard time stepping and the simulation history
- regularity.py: Maximal/sharp functions, oscillation decay, classifier
- simconfig.py: Scenario files and their validation
- snapshots.py: Snapshot, report, monitor and image writers
- invariants.py: Invariant suite behind the verify command
- mms.py: Manufactured-solution convergence studies
- cli.py: Command-line entry point
- config.py: Defaults, environment overrides and logging setup

Features:
- Discrete maximum principle and exact mass balance
- Zero-mean pressure with conservative fluxes
- Regular/singular point classification with the raw series attached
- Deterministic, checksummed snapshots
"""

__version__ = "1.0.0"
__author__ = "Miscible Development Team"
