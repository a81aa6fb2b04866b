"""File formats for the command-line tools.

All writers format floats with repr and timestamps as UTC `...Z` strings, so
a rerun with identical inputs produces byte-identical files. Readers reject
rather than repair structural problems (wrong header, ragged rows,
non-uniform time axes); value-level repair is validate_frame's job.
"""

from __future__ import annotations

import csv
import json
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .core import HistoryWindow, TimeAxis, format_timestamp, parse_timestamp
from .mpc import Decision, decision_log_line
from .planner import FloodingPlan
from .sim import Trajectory

HISTORY_HEADER = ("timestamp", "oxygen_pct", "swc", "flood", "precip_mm", "temp_c", "rh_pct", "wind_ms")
TRAJECTORY_HEADER = ("timestamp", "flood", "precip_mm", "swc", "oxygen_pct", "et_mm", "drainage_mm", "delta_storage_mm")
PLOTDATA_HEADER = ("timestamp", "oxygen_pct", "swc", "flood", "precip_mm", "drainage_mm")


def _fmt(value: float) -> str:
    return repr(float(value))


@contextmanager
def _opened(dest, mode: str = "w"):
    if hasattr(dest, "write"):
        yield dest
    else:
        newline = "" if "b" not in mode else None
        with open(dest, mode, newline=newline) as fh:
            yield fh


def _uniform_axis(stamps: list, where: str) -> TimeAxis:
    if len(stamps) > 1:
        deltas = {
            (stamps[i + 1] - stamps[i]).total_seconds() for i in range(len(stamps) - 1)
        }
        if any(d <= 0 for d in deltas):
            raise ValueError(f"{where}: timestamps must be strictly increasing")
        if len(deltas) != 1:
            raise ValueError(f"{where}: timestamps must be uniformly spaced")
        step = deltas.pop()
    else:
        step = 600.0
    from datetime import timedelta

    return TimeAxis(stamps[0], len(stamps), timedelta(seconds=step))


def load_history(path) -> HistoryWindow:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise ValueError(f"{path}: empty history file") from None
        if header != HISTORY_HEADER:
            raise ValueError(
                f"{path}: header must be {','.join(HISTORY_HEADER)}, got {','.join(header)}"
            )
        stamps = []
        cols: list[list[float]] = [[] for _ in range(7)]
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 8:
                raise ValueError(f"{path}:{lineno}: expected 8 fields, got {len(row)}")
            try:
                stamps.append(parse_timestamp(row[0]))
                for i in range(7):
                    cols[i].append(float(row[i + 1]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not stamps:
        raise ValueError(f"{path}: no data rows")
    axis = _uniform_axis(stamps, str(path))
    names = HISTORY_HEADER[1:]
    return HistoryWindow.from_columns(axis, {n: np.array(c) for n, c in zip(names, cols)})


def write_history(history: HistoryWindow, dest) -> None:
    with _opened(dest) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        cols = [history.column(n) for n in HISTORY_HEADER[1:]]
        for i in range(len(history)):
            w.writerow([format_timestamp(history.axis.timestamp(i))] + [_fmt(c[i]) for c in cols])


def write_trajectory(traj: Trajectory, dest) -> None:
    with _opened(dest) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for i in range(len(traj)):
            w.writerow(
                [
                    format_timestamp(traj.axis.timestamp(i)),
                    _fmt(traj.flood[i]),
                    _fmt(traj.precip_mm[i]),
                    _fmt(traj.swc[i]),
                    _fmt(traj.oxygen_pct[i]),
                    _fmt(traj.et_mm[i]),
                    _fmt(traj.drainage_mm[i]),
                    _fmt(traj.delta_storage_mm[i]),
                ]
            )


def load_plan(path) -> FloodingPlan:
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                return FloodingPlan.from_line(line)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    raise ValueError(f"{path}: no plan line found")


def write_plans(plans, stream) -> None:
    for plan in plans:
        stream.write(plan.as_line() + "\n")


def write_decisions(decisions: list[Decision], dest) -> None:
    with _opened(dest) as fh:
        for d in decisions:
            fh.write(decision_log_line(d) + "\n")


def write_json(obj, dest) -> None:
    with _opened(dest) as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_plotdata(report, dest) -> None:
    """Season plot data: the oxygen trace plus flood/precipitation bars."""
    with _opened(dest) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOTDATA_HEADER)
        for i in range(report.axis.count):
            w.writerow(
                [
                    format_timestamp(report.axis.timestamp(i)),
                    _fmt(report.oxygen.values[i]),
                    _fmt(report.swc[i]),
                    _fmt(report.flood[i]),
                    _fmt(report.precip_mm[i]),
                    _fmt(report.drainage_mm[i]),
                ]
            )


@dataclass
class RunManifest:
    command: str
    inputs: dict
    seeds: dict
    outputs: list[str]
    artifact_version: str
    duration_s: float

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "inputs": self.inputs,
            "seeds": self.seeds,
            "outputs": self.outputs,
            "artifact_version": self.artifact_version,
            "duration_s": self.duration_s,
        }


def write_manifest(manifest: RunManifest, path) -> None:
    write_json(manifest.to_dict(), path)
