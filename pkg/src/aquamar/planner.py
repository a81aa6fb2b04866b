"""Enumeration of feasible flooding plans under run-length constraints.

A plan is a binary schedule over the horizon. Flood runs must last between
``min_flood`` and ``max_flood`` steps (in multiples of the quantum ``q``),
idle gaps between runs must last at least ``min_idle`` steps, and an
in-progress run at the horizon start can never be revoked, only continued.

Naively there are 2^H schedules; the run-length recursion plus quantization
cuts this to a few thousand at operating scale. Run durations live on the
``q`` grid while run start positions are additionally snapped to a coarser
``q**3`` grid: re-planning every step restores fine start granularity in
closed loop, so candidate starts only need to cover coarse alternatives.
At ``q = 1`` both grids are unit and enumeration is exhaustive (the oracle
tests rely on that).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# Idle elapsed large enough to never constrain a new flood start.
FRESH_IDLE = 1 << 30


@dataclass(frozen=True)
class PlanConstraints:
    min_flood: int
    max_flood: int
    min_idle: int
    horizon: int
    quantum: int = 1

    def __post_init__(self) -> None:
        if not (1 <= self.min_flood <= self.max_flood <= self.horizon):
            raise ValueError("require 1 <= min_flood <= max_flood <= horizon")
        if self.min_idle < 1:
            raise ValueError("min_idle must be >= 1")
        if self.quantum < 1:
            raise ValueError("quantum must be >= 1")
        for name in ("min_flood", "max_flood", "min_idle"):
            if getattr(self, name) % self.quantum:
                raise ValueError(f"quantum must divide {name}")

    @classmethod
    def field_scale(cls) -> "PlanConstraints":
        """Operating-scale defaults: 6 h..24 h floods, >= 24 h aeration gaps,
        1 h quantum, 120 h horizon."""
        return cls(min_flood=36, max_flood=144, min_idle=144, horizon=720, quantum=6)

    @property
    def start_grid(self) -> int:
        return self.quantum**3


@dataclass(frozen=True)
class InitialRunState:
    mode: str
    elapsed: int

    def __post_init__(self) -> None:
        if self.mode not in ("idle", "flooding"):
            raise ValueError("mode must be 'idle' or 'flooding'")
        if self.elapsed < 0:
            raise ValueError("elapsed must be >= 0")

    @classmethod
    def idle(cls, elapsed: int = FRESH_IDLE) -> "InitialRunState":
        return cls("idle", elapsed)

    @classmethod
    def flooding(cls, elapsed: int) -> "InitialRunState":
        return cls("flooding", elapsed)

    @property
    def is_flooding(self) -> bool:
        return self.mode == "flooding"


@dataclass(frozen=True)
class FloodingPlan:
    steps: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.steps, dtype=np.int8)
        if arr.ndim != 1:
            raise ValueError("plan must be one-dimensional")
        if arr.size and not np.all((arr == 0) | (arr == 1)):
            raise ValueError("plan must be binary")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "steps", arr)

    def __len__(self) -> int:
        return self.steps.size

    def as_line(self) -> str:
        return "".join("1" if v else "0" for v in self.steps)

    @classmethod
    def from_line(cls, line: str) -> "FloodingPlan":
        bad = set(line) - {"0", "1"}
        if bad:
            raise ValueError(f"plan line may contain only 0/1, got {sorted(bad)!r}")
        return cls(np.frombuffer(line.encode(), dtype=np.uint8) - ord("0"))

    @property
    def first_flood_start(self) -> int | None:
        idx = np.flatnonzero(self.steps)
        return int(idx[0]) if idx.size else None

    @property
    def flood_run_count(self) -> int:
        padded = np.diff(np.concatenate([[0], self.steps]))
        return int(np.count_nonzero(padded == 1))


def _check_init(constraints: PlanConstraints, init: InitialRunState) -> None:
    if init.is_flooding and init.elapsed >= constraints.max_flood:
        raise ValueError("flooding elapsed must be < max_flood")


def _runs(bits) -> list[tuple[int, int]]:
    """Maximal (value, length) runs, in order."""
    out: list[tuple[int, int]] = []
    for v in bits:
        v = int(v)
        if out and out[-1][0] == v:
            out[-1] = (v, out[-1][1] + 1)
        else:
            out.append((v, 1))
    return out


def is_valid_plan(plan, constraints: PlanConstraints, init: InitialRunState) -> bool:
    c = constraints
    _check_init(c, init)
    steps = plan.steps if isinstance(plan, FloodingPlan) else np.asarray(plan)
    if steps.shape != (c.horizon,):
        raise ValueError(f"plan length {steps.shape} != horizon {c.horizon}")

    runs = _runs(steps)
    if init.is_flooding and (not runs or runs[0][0] == 0) and init.elapsed < c.min_flood:
        return False  # stopping would strand a too-short run
    if not init.is_flooding and runs and runs[0][0] == 1 and init.elapsed < c.min_idle:
        return False  # new run may not start until the aeration gap has passed

    one_positions = [i for i, (v, _) in enumerate(runs) if v == 1]
    for idx, (v, length) in enumerate(runs):
        if v == 1:
            eff = length
            if idx == 0 and init.is_flooding:
                eff += init.elapsed
            touches_end = idx == len(runs) - 1
            if not (c.min_flood <= eff <= c.max_flood):
                return False
            if not touches_end and eff % c.quantum:
                return False
        else:
            interior = 0 < idx < len(runs) - 1
            if interior and length < c.min_idle:
                return False
            if idx == 0 and one_positions:
                # Leading idle before a new run: the time already spent idle
                # (or the just-stopped initial flood needing aeration) counts.
                credit = init.elapsed if not init.is_flooding else 0
                if credit + length < c.min_idle:
                    return False
    return True


def _first_run_options(c: PlanConstraints, extra: int, at: int) -> list[int]:
    """Durations for a run starting at ``at`` whose effective length includes
    ``extra`` already-elapsed steps."""
    H, q = c.horizon, c.quantum
    opts: list[int] = []
    lo = max(c.min_flood, extra + 1)
    eff = -(-lo // q) * q
    while eff <= c.max_flood:
        d = eff - extra
        if at + d < H:
            opts.append(d)
        eff += q
    d_end = H - at
    if c.min_flood <= extra + d_end <= c.max_flood:
        opts.append(d_end)
    return sorted(set(opts))


def _snap_up(value: int, grid: int) -> int:
    return -(-value // grid) * grid


def enumerate_plans(constraints: PlanConstraints, init: InitialRunState) -> list[FloodingPlan]:
    """All candidate plans in deterministic order: earlier first flood start
    first, then shorter first run, recursively; the no-further-floods plan of
    each branch comes last, so the all-zero plan closes the list."""
    c = constraints
    _check_init(c, init)
    H = c.horizon
    plans: list[FloodingPlan] = []

    def emit(segments: list[tuple[int, int]]) -> None:
        buf = np.zeros(H, dtype=np.int8)
        for s, d in segments:
            buf[s : s + d] = 1
        plans.append(FloodingPlan(buf))

    def rec(pos_min: int, segments: list[tuple[int, int]]) -> None:
        s = _snap_up(pos_min, c.start_grid)
        while s + 1 <= H and s < H:
            for d in _first_run_options(c, 0, s):
                nxt = segments + [(s, d)]
                if s + d >= H:
                    emit(nxt)
                else:
                    rec(s + d + c.min_idle, nxt)
            s += c.start_grid
        emit(segments)

    if init.is_flooding:
        for d in _first_run_options(c, init.elapsed, 0):
            if d >= H:
                emit([(0, d)])
            else:
                rec(d + c.min_idle, [(0, d)])
        if init.elapsed >= c.min_flood:
            rec(c.min_idle, [])
    else:
        rec(max(0, c.min_idle - init.elapsed), [])
    return plans


def count_plans(constraints: PlanConstraints, init: InitialRunState) -> int:
    """Length of enumerate_plans without materializing plans."""
    c = constraints
    _check_init(c, init)
    H = c.horizon

    @lru_cache(maxsize=None)
    def tail_count(pos_min: int) -> int:
        total = 1
        s = _snap_up(pos_min, c.start_grid)
        while s < H:
            for d in _first_run_options(c, 0, s):
                total += 1 if s + d >= H else tail_count(s + d + c.min_idle)
            s += c.start_grid
        return total

    if init.is_flooding:
        total = 0
        for d in _first_run_options(c, init.elapsed, 0):
            total += 1 if d >= H else tail_count(d + c.min_idle)
        if init.elapsed >= c.min_flood:
            total += tail_count(c.min_idle)
        return total
    return tail_count(max(0, c.min_idle - init.elapsed))


def fallback_plan(constraints: PlanConstraints, init: InitialRunState) -> FloodingPlan:
    """The least-flooding candidate: all zeros when idle or when the current
    run may stop; otherwise the shortest permitted continuation then idle."""
    c = constraints
    _check_init(c, init)
    buf = np.zeros(c.horizon, dtype=np.int8)
    if init.is_flooding and init.elapsed < c.min_flood:
        opts = _first_run_options(c, init.elapsed, 0)
        if not opts:
            raise ValueError("no permissible continuation exists for this horizon")
        buf[: opts[0]] = 1
    return FloodingPlan(buf)


def sample_schedule(n_steps: int, constraints: PlanConstraints, rng, duty: float = 0.3) -> np.ndarray:
    """Random constraint-respecting schedule, useful for generating varied
    training histories. ``duty`` is the approximate flooding fraction."""
    c = constraints
    q = c.quantum
    out = np.zeros(n_steps, dtype=np.int8)
    pos = 0
    while pos < n_steps:
        mean_idle = max(c.min_idle, c.min_flood * (1 - duty) / max(duty, 1e-6))
        idle = c.min_idle + q * int(rng.exponential(max(mean_idle - c.min_idle, q) / q))
        pos += idle
        if pos >= n_steps:
            break
        n_durations = (c.max_flood - c.min_flood) // q + 1
        dur = c.min_flood + q * int(rng.integers(0, n_durations))
        end = min(pos + dur, n_steps)
        out[pos:end] = 1
        pos = end
    return out
