#!/usr/bin/env python3
"""
Grid-refinement and truncation study for a scenario.

Runs the scenario on each grid, prints the discrete energy and the
cumulative mass balance, then compares fixed truncation levels against the
untruncated run on the coarsest grid.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from miscible.config import get_configs_dir, setup_logging  # noqa: E402
from miscible.coupling import run_simulation, truncation_study  # noqa: E402
from miscible.simconfig import load_config  # noqa: E402


def energy_refinement(config, grids):
    """Energy total per grid and the spread relative to the finest grid."""
    totals = {}
    for n in grids:
        history = run_simulation(config.with_grid(n))
        totals[n] = history.energy.total
        balance = history.cumulative_balance()["relative_error"]
        print(f"n={n:4d}  energy={totals[n]:.6e}  balance error={balance:.2e}")
    finest = totals[grids[-1]]
    for n in grids[:-1]:
        print(f"📊 energy change {n} -> {grids[-1]}: {abs(totals[n] - finest) / finest:.1%}")
    return totals


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(get_configs_dir() / "five_spot.cfg"))
    parser.add_argument("--grid", type=int, action="append")
    parser.add_argument("--k", type=int, action="append", help="truncation levels to compare")
    args = parser.parse_args()
    setup_logging()

    config = load_config(args.config)
    grids = sorted(args.grid or [32, 64])
    energy_refinement(config, grids)

    rows = truncation_study(config.with_grid(grids[0]), args.k or [1, 2, 4])
    for row in rows:
        print(f"k={row['k']:3d}  sup diff={row['sup_difference']:.3e}  l2 diff={row['l2_difference']:.3e}")


if __name__ == "__main__":
    main()
