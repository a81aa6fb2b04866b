"""Desk-scale soil process model: single-layer water bucket plus a first-order
oxygen ODE.

Water: flooding and rain add storage; evapotranspiration follows a daylight
curve scaled by temperature and water availability; drainage (deep
percolation, the quantity a recharge controller maximizes) follows a power
law above field capacity. Inflow beyond saturation ponds and is routed to
same-step drainage, so mass balance holds exactly at every step.

Oxygen: gas exchange with the atmosphere relaxes oxygen upward at a rate
that vanishes as pores fill with water, while root/microbial respiration
consumes oxygen faster in warm, wet soil. Saturated soil therefore shows the
characteristic V-curve: oxygen keeps falling after the valve closes and only
turns around once enough pore space has drained.

The default parameters are frozen in ``data/default_params.txt``. They were
tuned once so that (a) a 720-step continuous flood starting from field
capacity drives oxygen below 10%, and (b) idle soil near field capacity
re-equilibrates in the 17-19% range, leaving usable headroom above the
safety threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from importlib import resources

import numpy as np

from .core import TimeAxis, HistoryWindow


@dataclass(frozen=True)
class SimParams:
    theta_s: float = 0.45
    theta_fc: float = 0.32
    theta_wp: float = 0.15
    theta_r: float = 0.05
    z_root_mm: float = 600.0
    flood_gain_mm_per_step: float = 2.5
    ks_mm_per_step: float = 1.2
    gamma: float = 2.0
    et_base_mm_per_step: float = 0.05
    t_ref_c: float = 15.0
    o_atm_pct: float = 20.9
    d_max_per_step: float = 0.035
    mu: float = 1.5
    r_base_pct_per_step: float = 0.018
    q10: float = 2.0

    def __post_init__(self) -> None:
        if not (self.theta_r < self.theta_wp < self.theta_fc < self.theta_s <= 1.0):
            raise ValueError("require theta_r < theta_wp < theta_fc < theta_s <= 1")
        for name in (
            "z_root_mm",
            "flood_gain_mm_per_step",
            "ks_mm_per_step",
            "gamma",
            "et_base_mm_per_step",
            "d_max_per_step",
            "mu",
            "r_base_pct_per_step",
            "q10",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.z_root_mm <= 0:
            raise ValueError("z_root_mm must be positive")
        if not (0.0 < self.o_atm_pct <= 21.0):
            raise ValueError("o_atm_pct must lie in (0, 21]")


@dataclass(frozen=True)
class SimState:
    swc: float
    oxygen_pct: float
    ponded: bool = False


@dataclass(frozen=True)
class SimStepOutput:
    et_mm: float
    drainage_mm: float
    delta_storage_mm: float
    applied_mm: float
    precip_mm: float


def default_state(params: SimParams) -> SimState:
    """Field at rest: field capacity, atmospheric oxygen, no ponding."""
    return SimState(swc=params.theta_fc, oxygen_pct=params.o_atm_pct, ponded=False)


def daylight_factor(hour: float) -> float:
    return max(0.0, math.sin(math.pi * (hour - 6.0) / 12.0))


def soil_limiter(theta: float, params: SimParams) -> float:
    if theta <= params.theta_wp:
        return 0.0
    if theta >= params.theta_fc:
        return 1.0
    return (theta - params.theta_wp) / (params.theta_fc - params.theta_wp)


def step(state: SimState, action: int, weather, params: SimParams) -> tuple[SimState, SimStepOutput]:
    """Advance one 10-minute step.

    ``weather`` needs fields timestamp, precip_mm, temp_c. Oxygen exchange and
    respiration rates are evaluated at the incoming state's water content.
    """
    p = params
    theta = state.swc
    applied = (1.0 if action else 0.0) * p.flood_gain_mm_per_step
    precip = float(weather.precip_mm)
    inflow = applied + precip
    temp = float(weather.temp_c)

    ts = weather.timestamp
    hour = ts.hour + ts.minute / 60.0 + ts.second / 3600.0
    et_pot = p.et_base_mm_per_step * max(0.0, temp / p.t_ref_c) * daylight_factor(hour) * soil_limiter(theta, p)
    if theta > p.theta_fc:
        drain_pot = p.ks_mm_per_step * ((theta - p.theta_fc) / (p.theta_s - p.theta_fc)) ** p.gamma
    else:
        drain_pot = 0.0

    et = et_pot
    drainage = drain_pot
    theta_tent = theta + (inflow - et_pot - drain_pot) / p.z_root_mm
    ponded = False
    if theta_tent > p.theta_s:
        # Ponded: excess inflow cannot be stored and percolates the same step.
        drainage = inflow - et - (p.theta_s - theta) * p.z_root_mm
        theta_new = p.theta_s
        ponded = True
    elif theta_tent < p.theta_r:
        # Dry floor: cut ET (then drainage) rather than overdraw residual water.
        avail = (theta - p.theta_r) * p.z_root_mm + inflow
        et = min(et_pot, max(avail, 0.0))
        drainage = min(drain_pot, max(avail - et, 0.0))
        theta_new = p.theta_r
    else:
        theta_new = theta_tent
    theta_new = min(max(theta_new, p.theta_r), p.theta_s)

    d_eff = p.d_max_per_step * ((p.theta_s - theta) / (p.theta_s - p.theta_r)) ** p.mu
    resp = p.r_base_pct_per_step * p.q10 ** ((temp - p.t_ref_c) / 10.0) * (theta / p.theta_s)
    oxygen = state.oxygen_pct + d_eff * (p.o_atm_pct - state.oxygen_pct) - resp
    oxygen = min(max(oxygen, 0.0), p.o_atm_pct)

    out = SimStepOutput(
        et_mm=et,
        drainage_mm=drainage,
        delta_storage_mm=inflow - et - drainage,
        applied_mm=applied,
        precip_mm=precip,
    )
    return SimState(swc=theta_new, oxygen_pct=oxygen, ponded=ponded), out


@dataclass(frozen=True)
class Trajectory:
    axis: TimeAxis
    swc: np.ndarray
    oxygen_pct: np.ndarray
    ponded: np.ndarray
    flood: np.ndarray
    et_mm: np.ndarray
    drainage_mm: np.ndarray
    delta_storage_mm: np.ndarray
    applied_mm: np.ndarray
    precip_mm: np.ndarray
    final_state: SimState

    def __len__(self) -> int:
        return self.axis.count

    def to_history(self, weather) -> HistoryWindow:
        """Join simulated soil series with the driving weather into one frame."""
        return HistoryWindow(
            axis=self.axis,
            oxygen_pct=self.oxygen_pct,
            swc=self.swc,
            flood=self.flood,
            precip_mm=self.precip_mm,
            temp_c=np.asarray(weather.temp_c, dtype=float),
            rh_pct=np.asarray(weather.rh_pct, dtype=float),
            wind_ms=np.asarray(weather.wind_ms, dtype=float),
        )


def simulate(initial: SimState, plan, weather, params: SimParams) -> Trajectory:
    """Fold ``step`` over the weather axis. ``plan`` is a binary sequence the
    same length as the weather series."""
    actions = np.asarray(getattr(plan, "steps", plan), dtype=float)
    n = weather.axis.count
    if actions.shape != (n,):
        raise ValueError(f"plan length {actions.shape} does not match weather axis {n}")
    if actions.size and not np.all((actions == 0) | (actions == 1)):
        raise ValueError("plan must be binary")

    swc = np.empty(n)
    oxygen = np.empty(n)
    ponded = np.empty(n, dtype=bool)
    et = np.empty(n)
    drain = np.empty(n)
    dstor = np.empty(n)
    applied = np.empty(n)
    precip = np.empty(n)

    state = initial
    for i in range(n):
        state, out = step(state, int(actions[i]), weather.record(i), params)
        swc[i] = state.swc
        oxygen[i] = state.oxygen_pct
        ponded[i] = state.ponded
        et[i] = out.et_mm
        drain[i] = out.drainage_mm
        dstor[i] = out.delta_storage_mm
        applied[i] = out.applied_mm
        precip[i] = out.precip_mm

    return Trajectory(
        axis=weather.axis,
        swc=swc,
        oxygen_pct=oxygen,
        ponded=ponded,
        flood=actions.copy(),
        et_mm=et,
        drainage_mm=drain,
        delta_storage_mm=dstor,
        applied_mm=applied,
        precip_mm=precip,
        final_state=state,
    )


_PARAM_FIELDS = {f.name for f in fields(SimParams)}


def parse_params(text: str) -> SimParams:
    """Parse flat ``key = value`` parameter text. Unknown keys are rejected;
    omitted keys keep their defaults."""
    overrides: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _PARAM_FIELDS:
            raise ValueError(f"line {lineno}: unknown parameter {key!r}")
        if key in overrides:
            raise ValueError(f"line {lineno}: duplicate parameter {key!r}")
        try:
            overrides[key] = float(value.strip())
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad number for {key!r}") from exc
    return replace(SimParams(), **overrides)


def format_params(params: SimParams) -> str:
    lines = ["# soil simulator parameters"]
    lines += [f"{f.name} = {getattr(params, f.name)!r}" for f in fields(SimParams)]
    return "\n".join(lines) + "\n"


def load_params(path) -> SimParams:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_params(fh.read())


def default_params() -> SimParams:
    """The frozen default parameter set shipped with the package."""
    text = resources.files("aquamar.data").joinpath("default_params.txt").read_text("utf-8")
    return parse_params(text)
