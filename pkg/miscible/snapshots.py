"""
Snapshot and report I/O.

Snapshots are plain text: a commented header followed by one value per line
in row-major order. Values are written with ``repr`` (shortest round-trip
decimal), so reading returns bit-identical floats, and identical fields
produce identical bytes.
"""

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
from PIL import Image

from .config import REPORT_SUFFIX, SNAPSHOT_SUFFIX
from .errors import ChecksumMismatchError, SnapshotError
from .grid import Grid2D, ScalarField

logger = logging.getLogger(__name__)

MAGIC = "# miscible snapshot v1"
_HEADER_KEYS = ("field", "nx", "ny", "h", "origin", "time", "sha256")


@dataclass
class SnapshotFile:
    """Parsed snapshot: header values plus the field."""

    name: str
    time: float
    field: ScalarField
    checksum: str


def _value_block(field: ScalarField) -> str:
    return "".join(f"{value!r}\n" for value in field.ravel().tolist())


def checksum_of(block: str) -> str:
    return hashlib.sha256(block.encode("utf-8")).hexdigest()


def format_snapshot(field: ScalarField, name: str = "u", time: float = 0.0) -> str:
    """Text of a snapshot file."""
    grid = field.grid
    block = _value_block(field)
    header = [
        MAGIC,
        f"# field {name}",
        f"# nx {grid.nx}",
        f"# ny {grid.ny}",
        f"# h {grid.h!r}",
        f"# origin {grid.origin[0]!r} {grid.origin[1]!r}",
        f"# time {float(time)!r}",
        f"# sha256 {checksum_of(block)}",
    ]
    return "\n".join(header) + "\n" + block


def write_snapshot(field: ScalarField, path, name: str = "u", time: float = 0.0) -> Path:
    """Write a field; identical inputs give identical bytes.

    Raises:
        SnapshotError: the file cannot be written
    """
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(format_snapshot(field, name, time))
    except OSError as exc:
        raise SnapshotError(f"cannot write snapshot {path}: {exc}") from exc
    return path


def parse_snapshot(text: str, source: str = "<text>") -> SnapshotFile:
    lines = text.splitlines()
    if not lines or lines[0] != MAGIC:
        raise SnapshotError(f"{source}: not a snapshot file")
    header: Dict[str, str] = {}
    position = 1
    while position < len(lines) and lines[position].startswith("#"):
        key, _, value = lines[position][1:].strip().partition(" ")
        header[key] = value.strip()
        position += 1
    missing = [key for key in _HEADER_KEYS if key not in header]
    if missing:
        raise SnapshotError(f"{source}: header lacks {', '.join(missing)}")

    value_lines = lines[position:]
    block = "".join(f"{line}\n" for line in value_lines)
    if checksum_of(block) != header["sha256"]:
        raise ChecksumMismatchError(f"{source}: checksum mismatch")
    try:
        nx, ny = int(header["nx"]), int(header["ny"])
        h = float(header["h"])
        ox, oy = (float(part) for part in header["origin"].split())
        time = float(header["time"])
        values = np.array([float(line) for line in value_lines], dtype=np.float64)
    except ValueError as exc:
        raise SnapshotError(f"{source}: malformed header or value: {exc}") from exc
    if values.size != nx * ny:
        raise SnapshotError(f"{source}: expected {nx * ny} values, found {values.size}")
    grid = Grid2D(nx, ny, h, (ox, oy))
    return SnapshotFile(header["field"], time, ScalarField(grid, values), header["sha256"])


def read_snapshot(path) -> SnapshotFile:
    """Read and checksum-validate a snapshot.

    Raises:
        SnapshotError: unreadable or malformed file
        ChecksumMismatchError: values altered after writing
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SnapshotError(f"cannot read snapshot {path}: {exc}") from exc
    return parse_snapshot(text, str(path))


def _json_safe(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(key): _json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(item) for item in value]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_report(report: Dict[str, Any], path) -> Path:
    """Write a structured report as sorted-key JSON (non-finite numbers become null)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_json_safe(report), sort_keys=True, indent=2, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def export_png(field: ScalarField, path, lo: float = None, hi: float = None) -> Path:
    """Grayscale image of a field, north up, values mapped linearly from [lo, hi]."""
    values = field.values
    lo = float(values.min()) if lo is None else lo
    hi = float(values.max()) if hi is None else hi
    span = hi - lo if hi > lo else 1.0
    scaled = np.clip((values - lo) / span, 0.0, 1.0)
    pixels = np.flipud(np.round(scaled * 255.0)).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels).save(path)
    return path


MONITOR_COLUMNS = (
    "step",
    "time",
    "dt",
    "mass",
    "min_u",
    "max_u",
    "balance_error",
    "picard_iterations",
    "picard_residual",
    "pressure_iterations",
    "energy",
)


def write_monitors(rows: List[Dict[str, Any]], path) -> Path:
    """CSV of per-step monitor values (floats in repr form)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=MONITOR_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: repr(row[key]) if isinstance(row[key], float) else row[key] for key in MONITOR_COLUMNS})
    return path


def snapshot_name(kind: str, index: int) -> str:
    return f"{kind}_{index:05d}{SNAPSHOT_SUFFIX}"


def write_history(history, out_dir, png: bool = False) -> List[Path]:
    """Write u and p snapshots, the monitor CSV and a run summary.

    Args:
        history: SimulationHistory from run_simulation
        out_dir: Target directory (created if needed)
        png: Also export a PNG image of each concentration snapshot

    Returns:
        Paths written, in order
    """
    out_dir = Path(out_dir)
    written = []
    for index, (time, u, p) in enumerate(zip(history.times, history.u, history.p)):
        written.append(write_snapshot(u, out_dir / snapshot_name("u", index), "u", time))
        written.append(write_snapshot(p, out_dir / snapshot_name("p", index), "p", time))
        if png:
            written.append(export_png(u, out_dir / f"u_{index:05d}.png", 0.0, 1.0))
    written.append(write_monitors(history.monitor_rows(), out_dir / "monitors.csv"))
    written.append(write_report(history.summary(), out_dir / f"summary{REPORT_SUFFIX}"))
    logger.info("Wrote %d files to %s", len(written), out_dir)
    return written


def load_snapshot_series(directory, kind: str) -> List[SnapshotFile]:
    """All snapshots of one kind in a directory, in file-name order."""
    directory = Path(directory)
    return [read_snapshot(path) for path in sorted(directory.glob(f"{kind}_*{SNAPSHOT_SUFFIX}"))]
