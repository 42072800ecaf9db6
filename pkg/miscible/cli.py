"""
Command-line entry point: run, verify, mms and diagnose.

Exit codes: 0 success, 1 invariant violation or solver failure,
2 usage or configuration error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from . import __version__
from .config import REPORT_SUFFIX, setup_logging
from .errors import (
    ConfigurationError,
    InvariantViolation,
    MiscibleError,
    ResolutionError,
    SnapshotError,
)
from .grid import Snapshot
from .regularity import ClassifierThresholds, diagnose_point
from .simconfig import SimulationConfig, build_problem, load_config
from .snapshots import load_snapshot_series, write_history, write_report

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting on bad usage."""

    def error(self, message):
        raise ConfigurationError(f"usage: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="miscible", description="Miscible displacement simulator and regularity diagnostics")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="scenario file (flat TOML)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")

    run = sub.add_parser("run", help="simulate and write snapshots")
    common(run)
    run.add_argument("--grid", type=int, help="cells per side")
    run.add_argument("--tfinal", type=float, help="final time")
    run.add_argument("--strict", action="store_true", help="fail on Picard non-convergence")
    run.add_argument("--png", action="store_true", help="also export concentration images")

    verify = sub.add_parser("verify", help="run the invariant suite")
    common(verify, config_required=False)
    verify.add_argument("--grid", type=int, help="cells per side")
    verify.add_argument("--tfinal", type=float, help="final time")
    verify.add_argument("--strict", action="store_true", help="fail on Picard non-convergence")
    verify.add_argument("--snapshots", help="check an existing snapshot directory instead of running")

    mms = sub.add_parser("mms", help="manufactured-solution convergence study")
    common(mms, config_required=False)
    mms.add_argument("--grid", type=int, action="append", help="grid size (repeatable)")
    mms.add_argument("--which", choices=("pressure", "transport", "both"), default="both")

    diagnose = sub.add_parser("diagnose", help="regularity report for space-time points")
    common(diagnose)
    diagnose.add_argument("--grid", type=int, help="cells per side")
    diagnose.add_argument("--tfinal", type=float, help="final time")
    diagnose.add_argument("--point", action="append", help="i,j,t with t a snapshot index or 'last' (repeatable)")
    diagnose.add_argument("--ladder", type=int, help="number of dyadic radii")
    diagnose.add_argument("--snapshots", help="diagnose stored snapshots instead of running")
    diagnose.add_argument("--strict", action="store_true", help="fail on Picard non-convergence")
    return parser


def parse_point(text: str) -> Tuple[int, int, int]:
    """'i,j,t' with t an index or 'last' -> (i, j, t); 'last' maps to -1."""
    parts = [part.strip() for part in text.split(",")]
    if len(parts) != 3:
        raise ConfigurationError(f"point must be i,j,t, got {text!r}")
    try:
        i, j = int(parts[0]), int(parts[1])
        t = -1 if parts[2].lower() == "last" else int(parts[2])
    except ValueError as exc:
        raise ConfigurationError(f"point must be i,j,t, got {text!r}") from exc
    return i, j, t


def _load(args) -> SimulationConfig:
    config = load_config(args.config)
    if getattr(args, "grid", None):
        config = config.with_grid(args.grid)
    overrides = {}
    if getattr(args, "tfinal", None) is not None:
        overrides["time.t_final"] = args.tfinal
    if getattr(args, "strict", False):
        overrides["strict_mode"] = True
    if getattr(args, "ladder", None) is not None:
        overrides["diagnostics.ladder_count"] = args.ladder
    return config.override(**overrides) if overrides else config


def _out_dir(args, default: str) -> Path:
    return Path(args.out) if args.out else Path(default)


def cmd_run(args) -> int:
    from .coupling import run_simulation

    config = _load(args)
    history = run_simulation(config)
    out = _out_dir(args, f"out/{config.name}")
    written = write_history(history, out, png=args.png)
    summary = history.summary()
    print(f"✅ Run finished: {summary['steps']} steps, {summary['snapshots']} snapshots")
    print(f"📊 u in [{summary['min_u']:.3e}, {summary['max_u']:.3e}], "
          f"balance error {summary['balance']['relative_error']:.2e}")
    print(f"📁 Wrote {len(written)} files to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .invariants import verify_config, verify_snapshots

    if args.snapshots:
        result = verify_snapshots(args.snapshots)
    elif args.config:
        result = verify_config(_load(args))
    else:
        raise ConfigurationError("verify needs --config or --snapshots")
    if args.out:
        write_report(result.to_dict(), Path(args.out) / f"verify{REPORT_SUFFIX}")
    for name, check in result.checks.items():
        mark = "✅" if check.passed else "❌"
        print(f"{mark} {name}: worst {check.worst:.3e} (tolerance {check.tolerance:.1e})")
    result.raise_for_failures()
    print("✅ All invariants hold")
    return EXIT_OK


def cmd_mms(args) -> int:
    from .mms import mms_convergence_study

    config = _load(args) if args.config else SimulationConfig()
    studies = ("pressure", "transport") if args.which == "both" else (args.which,)
    report = {}
    for which in studies:
        table = mms_convergence_study(config, args.grid, which)
        report[which] = table.to_dict()
        print(f"📊 {which} convergence")
        print(table.format())
    if args.out:
        path = write_report(report, Path(args.out) / f"mms{REPORT_SUFFIX}")
        print(f"📁 Wrote {path}")
    return EXIT_OK


def _histories(args, config: SimulationConfig) -> Tuple[List[Snapshot], List[Snapshot]]:
    if args.snapshots:
        u_files = load_snapshot_series(args.snapshots, "u")
        p_files = load_snapshot_series(args.snapshots, "p")
        if not u_files or len(u_files) != len(p_files):
            raise SnapshotError(f"{args.snapshots} needs matching u and p snapshots")
        return ([Snapshot(s.time, s.field) for s in u_files], [Snapshot(s.time, s.field) for s in p_files])
    from .coupling import run_simulation

    history = run_simulation(config)
    return history.u_history(), history.p_history()


def cmd_diagnose(args) -> int:
    config = _load(args)
    problem = build_problem(config)
    diag = config.diagnostics
    texts = args.point or list(diag.points)
    if not texts:
        texts = [f"{problem.grid.nx // 2},{problem.grid.ny // 2},last"]
    points = [parse_point(text) for text in texts]

    u_history, p_history = _histories(args, config)
    if u_history[0].field.grid.shape != problem.grid.shape:
        raise ConfigurationError("snapshots do not match the configured grid")
    thresholds = ClassifierThresholds(diag.theta1, None, diag.theta2_fraction, diag.theta3)
    reports = []
    for point in points:
        report = diagnose_point(
            u_history,
            p_history,
            point,
            problem.medium,
            problem.fluid,
            problem.sources,
            ladder_count=diag.ladder_count,
            s=diag.s,
            s1=diag.s1,
            ell=diag.ell[0],
            thresholds=thresholds,
        )
        reports.append(report.to_dict())
        print(f"📊 Point {point[0]},{point[1]},{point[2]}: {report.classification} ({report.reason})")

    out = _out_dir(args, f"out/{config.name}")
    path = write_report({"config": config.name, "points": reports}, out / f"diagnose{REPORT_SUFFIX}")
    print(f"📁 Wrote {path}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "verify": cmd_verify,
    "mms": cmd_mms,
    "diagnose": cmd_diagnose,
}


def execute_command(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except ConfigurationError as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help and --version
        return int(exc.code or 0)

    setup_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except InvariantViolation as exc:
        print(f"❌ Invariant violated: {exc.invariant} ({exc})", file=sys.stderr)
        return EXIT_FAILURE
    except (ConfigurationError, ResolutionError, SnapshotError) as exc:
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MiscibleError as exc:
        logger.error("Command %s failed: %s", args.command, exc)
        print(f"❌ {exc}", file=sys.stderr)
        return EXIT_FAILURE


def main():
    """Main entry point for the command line."""
    sys.exit(execute_command())


if __name__ == "__main__":
    main()
