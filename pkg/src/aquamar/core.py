"""Shared domain types, time axis, frame validation, and evaluation metrics.

Everything in this module is immutable after construction and free of I/O.
The 10-minute step is the native resolution of the whole package: sensor
histories, forecasts, flooding plans, and simulator trajectories all live on
a TimeAxis whose default step is 600 seconds.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone

import numpy as np

O_ATM_PCT = 20.9

VARIATE_NAMES = ("oxygen_pct", "swc", "flood", "precip_mm", "temp_c", "rh_pct", "wind_ms")

# Columns repaired by linear interpolation vs zero fill when a single step is missing.
_INTERP_COLUMNS = ("oxygen_pct", "swc", "temp_c", "rh_pct", "wind_ms")
_ZERO_FILL_COLUMNS = ("precip_mm", "flood")

SECONDS_PER_DAY = 86400.0


def _as_utc(ts: datetime) -> datetime:
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 timestamp; naive values are taken as UTC."""
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return _as_utc(datetime.fromisoformat(text))


def format_timestamp(ts: datetime) -> str:
    return _as_utc(ts).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class TimeAxis:
    """Uniform time grid: start instant, step duration, number of steps."""

    start: datetime
    count: int
    step: timedelta = timedelta(seconds=600)

    def __post_init__(self) -> None:
        object.__setattr__(self, "start", _as_utc(self.start))
        if self.step.total_seconds() <= 0:
            raise ValueError("step must be positive")
        if self.count < 0:
            raise ValueError("count must be non-negative")

    @property
    def step_seconds(self) -> float:
        return self.step.total_seconds()

    @property
    def duration_days(self) -> float:
        return self.count * self.step_seconds / SECONDS_PER_DAY

    def timestamp(self, i: int) -> datetime:
        return self.start + i * self.step

    def timestamps(self) -> list[datetime]:
        return [self.start + i * self.step for i in range(self.count)]

    def hours_of_day(self) -> np.ndarray:
        """Fractional hour of day (0..24) for every step, vectorized."""
        t0 = self.start.timestamp()
        secs = t0 + np.arange(self.count) * self.step_seconds
        return (secs % SECONDS_PER_DAY) / 3600.0

    def shift(self, steps: int) -> "TimeAxis":
        return TimeAxis(self.start + steps * self.step, self.count, self.step)

    def head(self, n: int) -> "TimeAxis":
        return TimeAxis(self.start, min(n, self.count), self.step)

    def slice(self, start: int, stop: int) -> "TimeAxis":
        start = max(0, start)
        stop = min(self.count, stop)
        return TimeAxis(self.start + start * self.step, max(0, stop - start), self.step)


def _freeze(arr) -> np.ndarray:
    out = np.asarray(arr, dtype=float).copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class HistoryWindow:
    """Multivariate sensor history: oxygen, soil water, flooding, and weather."""

    axis: TimeAxis
    oxygen_pct: np.ndarray
    swc: np.ndarray
    flood: np.ndarray
    precip_mm: np.ndarray
    temp_c: np.ndarray
    rh_pct: np.ndarray
    wind_ms: np.ndarray

    def __post_init__(self) -> None:
        for name in VARIATE_NAMES:
            object.__setattr__(self, name, _freeze(getattr(self, name)))

    def column(self, name: str) -> np.ndarray:
        if name not in VARIATE_NAMES:
            raise KeyError(f"unknown variate {name!r}")
        return getattr(self, name)

    def columns(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in VARIATE_NAMES}

    def __len__(self) -> int:
        return self.axis.count

    def tail(self, n: int) -> "HistoryWindow":
        start = max(0, len(self) - n)
        return self.slice(start, len(self))

    def slice(self, start: int, stop: int) -> "HistoryWindow":
        return HistoryWindow(
            axis=self.axis.slice(start, stop),
            **{name: getattr(self, name)[start:stop] for name in VARIATE_NAMES},
        )

    def concat(self, other: "HistoryWindow") -> "HistoryWindow":
        if abs((self.axis.timestamp(len(self)) - other.axis.start).total_seconds()) > 1e-6:
            raise ValueError("frames are not contiguous in time")
        if other.axis.step != self.axis.step:
            raise ValueError("frames have different step sizes")
        return HistoryWindow(
            axis=TimeAxis(self.axis.start, len(self) + len(other), self.axis.step),
            **{
                name: np.concatenate([getattr(self, name), getattr(other, name)])
                for name in VARIATE_NAMES
            },
        )

    @classmethod
    def from_columns(cls, axis: TimeAxis, data: dict[str, np.ndarray]) -> "HistoryWindow":
        missing = set(VARIATE_NAMES) - set(data)
        if missing:
            raise ValueError(f"missing variates: {sorted(missing)}")
        return cls(axis=axis, **{name: data[name] for name in VARIATE_NAMES})


@dataclass(frozen=True)
class ExogenousClues:
    """Known or proposed future inputs over the forecast horizon: weather forecast
    plus a candidate flooding plan."""

    axis: TimeAxis
    flood: np.ndarray
    precip_mm: np.ndarray
    temp_c: np.ndarray
    rh_pct: np.ndarray
    wind_ms: np.ndarray

    CLUE_NAMES = ("flood", "precip_mm", "temp_c", "rh_pct", "wind_ms")

    def __post_init__(self) -> None:
        for name in self.CLUE_NAMES:
            arr = _freeze(getattr(self, name))
            if arr.shape != (self.axis.count,):
                raise ValueError(f"clue column {name} length {arr.shape} != axis {self.axis.count}")
            object.__setattr__(self, name, arr)
        fl = np.asarray(self.flood)
        if fl.size and not np.all((fl == 0) | (fl == 1)):
            raise ValueError("flood proposal must be binary")

    def column(self, name: str) -> np.ndarray:
        if name not in self.CLUE_NAMES:
            raise KeyError(f"unknown clue {name!r}")
        return getattr(self, name)

    def with_flood(self, flood) -> "ExogenousClues":
        return replace(self, flood=np.asarray(flood, dtype=float))

    def __len__(self) -> int:
        return self.axis.count


@dataclass(frozen=True)
class OxygenTrace:
    axis: TimeAxis
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = _freeze(self.values)
        if vals.shape != (self.axis.count,):
            raise ValueError("trace length does not match axis")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.axis.count


@dataclass(frozen=True)
class ForecastMetrics:
    mse: float
    mae: float
    pte_hours: float
    pve: float


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    violations: tuple[str, ...] = ()
    repairs: tuple[str, ...] = ()
    frame: HistoryWindow | None = None


_RANGES = {
    "oxygen_pct": (0.0, O_ATM_PCT),
    "swc": (0.0, 1.0),
    "rh_pct": (0.0, 100.0),
}
_NON_NEGATIVE = ("precip_mm", "wind_ms")


def _repair_column(name: str, col: np.ndarray, violations: list, repairs: list) -> np.ndarray:
    """Fill single-step gaps; push anything longer onto the violation list."""
    bad = ~np.isfinite(col)
    if not bad.any():
        return col
    col = col.copy()
    n = len(col)
    i = 0
    while i < n:
        if not bad[i]:
            i += 1
            continue
        j = i
        while j < n and bad[j]:
            j += 1
        run = j - i
        if run > 1:
            violations.append(f"{name}: {run}-step gap at index {i} exceeds repair policy")
        elif name in _ZERO_FILL_COLUMNS:
            col[i] = 0.0
            repairs.append(f"{name}: zero-filled missing step at index {i}")
        elif i == 0 or j == n:
            violations.append(f"{name}: missing step at boundary index {i} cannot be interpolated")
        else:
            col[i] = 0.5 * (col[i - 1] + col[j])
            repairs.append(f"{name}: interpolated missing step at index {i}")
        i = j
    return col


def validate_frame(frame: HistoryWindow) -> ValidationReport:
    """Check ranges and axis consistency; repair single missing steps.

    Continuous columns are linearly interpolated across one-step gaps;
    precipitation and flood are zero-filled. Longer gaps are errors: the
    downstream models assume a dense 10-minute grid.
    """
    violations: list[str] = []
    repairs: list[str] = []
    n = frame.axis.count
    repaired: dict[str, np.ndarray] = {}
    for name in VARIATE_NAMES:
        col = frame.column(name)
        if col.shape != (n,):
            violations.append(f"{name}: length {col.shape[0]} does not match axis count {n}")
            repaired[name] = col
            continue
        repaired[name] = _repair_column(name, col, violations, repairs)

    for name, (lo, hi) in _RANGES.items():
        col = repaired[name]
        finite = np.isfinite(col)
        if np.any((col[finite] < lo) | (col[finite] > hi)):
            violations.append(f"{name}: value outside [{lo}, {hi}]")
    for name in _NON_NEGATIVE:
        col = repaired[name]
        finite = np.isfinite(col)
        if np.any(col[finite] < 0):
            violations.append(f"{name}: negative value")
    fl = repaired["flood"]
    finite = np.isfinite(fl)
    if np.any((fl[finite] != 0) & (fl[finite] != 1)):
        violations.append("flood: non-binary value")

    ok = not violations
    out_frame = None
    if ok:
        out_frame = HistoryWindow.from_columns(frame.axis, repaired)
    return ValidationReport(ok=ok, violations=tuple(violations), repairs=tuple(repairs), frame=out_frame)


def odr(trace: OxygenTrace | np.ndarray, threshold: float) -> float:
    """Fraction of steps with oxygen strictly below the threshold.

    Equality with the threshold counts as safe.
    """
    values = trace.values if isinstance(trace, OxygenTrace) else np.asarray(trace, dtype=float)
    if values.size == 0:
        raise ValueError("empty trace")
    return float(np.count_nonzero(values < threshold)) / values.size


def recharge_per_week(drainage_mm, axis: TimeAxis) -> float:
    """Total deep percolation expressed in inches per week."""
    drainage = np.asarray(drainage_mm, dtype=float)
    if np.any(drainage < 0):
        raise ValueError("drainage must be non-negative")
    days = axis.duration_days
    if days <= 0:
        raise ValueError("axis spans zero duration")
    return float(drainage.sum()) / 25.4 / (days / 7.0)


def forecast_metrics(pred: OxygenTrace, actual: OxygenTrace) -> ForecastMetrics:
    """Pointwise errors plus trough timing/value errors.

    The domain cares about the lowest oxygen excursion, so the "peak" metrics
    are computed on the minimum of each trace; argmin ties break earliest.
    """
    p = pred.values
    a = actual.values
    if p.size == 0 or a.size == 0:
        raise ValueError("empty trace")
    if p.shape != a.shape:
        raise ValueError("length mismatch")
    diff = p - a
    step_hours = pred.axis.step_seconds / 3600.0
    return ForecastMetrics(
        mse=float(np.mean(diff**2)),
        mae=float(np.mean(np.abs(diff))),
        pte_hours=float(abs(int(np.argmin(p)) - int(np.argmin(a))) * step_hours),
        pve=float(abs(p.min() - a.min())),
    )
