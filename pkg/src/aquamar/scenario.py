"""Season scenarios: a self-contained recipe for one closed-loop experiment.

A scenario pins everything a run needs so the same JSON file always yields
the same season: controller choice, timeline, synthetic weather, injected
storms, clue noise, field parameters, controller settings, and forecaster
settings. The timeline is one contiguous 10-minute axis; the first
``training_days`` drive an exploration schedule whose trajectory both trains
the forecaster and supplies the controller's initial history, and the season
starts immediately after.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources

import numpy as np

from .core import HistoryWindow, O_ATM_PCT, parse_timestamp, format_timestamp
from .forecast import ForecastModels, OxygenForecaster
from .mpc import MpcConfig, SeasonReport, run_closed_loop
from .planner import PlanConstraints, sample_schedule
from .sim import SimParams, SimState, simulate
from .weather import ForecastNoise, SynthWeatherConfig, WeatherSeries, synth_weather

STEPS_PER_DAY = 144

CONTROLLERS = ("mpc", "mpc-oracle", "weekly", "never")


@dataclass(frozen=True)
class Storm:
    """A rain burst added on top of the synthetic base, anchored to the
    season start so the same storm hits every controller identically."""

    start_day: float
    duration_h: float
    total_mm: float

    def __post_init__(self) -> None:
        if self.duration_h <= 0:
            raise ValueError("storm duration must be positive")
        if self.total_mm < 0:
            raise ValueError("storm total must be non-negative")


@dataclass
class Scenario:
    controller: str = "mpc"
    season_days: float = 38.0
    training_days: float = 56.0
    start: datetime = field(default_factory=lambda: datetime(2023, 1, 3))
    seed: int = 0
    exploration_duty: float = 0.3
    initial_swc: float = 0.30
    initial_oxygen_pct: float = 18.0
    weather: SynthWeatherConfig = field(default_factory=SynthWeatherConfig)
    noise: ForecastNoise = field(default_factory=ForecastNoise)
    storms: tuple[Storm, ...] = ()
    sim: SimParams = field(default_factory=SimParams)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    forecaster: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.start.tzinfo is None:
            self.start = self.start.replace(tzinfo=timezone.utc)
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        if self.season_days <= 0:
            raise ValueError("season_days must be positive")
        if self.training_days <= 0:
            raise ValueError("training_days must be positive")
        if not 0.0 <= self.exploration_duty <= 1.0:
            raise ValueError("exploration_duty must lie in [0, 1]")
        if not 0.0 < self.initial_swc <= 1.0:
            raise ValueError("initial_swc must lie in (0, 1]")
        if not 0.0 <= self.initial_oxygen_pct <= O_ATM_PCT:
            raise ValueError("initial_oxygen_pct out of range")
        unknown = set(self.forecaster) - set(OxygenForecaster().get_params())
        if unknown:
            raise ValueError(f"unknown forecaster settings: {sorted(unknown)}")

    @property
    def training_steps(self) -> int:
        return int(round(self.training_days * STEPS_PER_DAY))

    @property
    def season_steps(self) -> int:
        return int(round(self.season_days * STEPS_PER_DAY))


def _nested_from_dict(cls, raw: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**raw)


def scenario_from_dict(raw: dict) -> Scenario:
    if not isinstance(raw, dict):
        raise ValueError("scenario must be a JSON object")
    known = {f.name for f in dataclasses.fields(Scenario)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"scenario: unknown keys {sorted(unknown)}")
    kwargs = dict(raw)
    if "start" in kwargs:
        kwargs["start"] = parse_timestamp(kwargs["start"])
    if "weather" in kwargs:
        kwargs["weather"] = _nested_from_dict(SynthWeatherConfig, kwargs["weather"], "weather")
    if "noise" in kwargs:
        kwargs["noise"] = _nested_from_dict(ForecastNoise, kwargs["noise"], "noise")
    if "storms" in kwargs:
        kwargs["storms"] = tuple(
            _nested_from_dict(Storm, s, f"storms[{i}]") for i, s in enumerate(kwargs["storms"])
        )
    if "sim" in kwargs:
        kwargs["sim"] = _nested_from_dict(SimParams, kwargs["sim"], "sim")
    if "mpc" in kwargs:
        mpc_raw = dict(kwargs["mpc"])
        if "constraints" in mpc_raw:
            mpc_raw["constraints"] = _nested_from_dict(
                PlanConstraints, mpc_raw["constraints"], "mpc.constraints"
            )
        kwargs["mpc"] = _nested_from_dict(MpcConfig, mpc_raw, "mpc")
    return Scenario(**kwargs)


def scenario_to_dict(sc: Scenario) -> dict:
    out = dataclasses.asdict(sc)
    out["start"] = format_timestamp(sc.start)
    out["storms"] = [dataclasses.asdict(s) for s in sc.storms]
    return out


def default_scenario() -> Scenario:
    """The frozen 38-day season shipped with the package: 56 training days,
    two mid-season storms, noisy clues, hourly replanning."""
    text = resources.files("aquamar.data").joinpath("season38.json").read_text("utf-8")
    return scenario_from_dict(json.loads(text))


def inject_storms(weather: WeatherSeries, storms, season_start_step: int) -> WeatherSeries:
    if not storms:
        return weather
    step_h = weather.axis.step_seconds / 3600.0
    precip = weather.precip_mm.copy()
    for storm in storms:
        i0 = season_start_step + int(round(storm.start_day * STEPS_PER_DAY))
        n = max(1, int(round(storm.duration_h / step_h)))
        i1 = min(i0 + n, len(precip))
        i0 = max(i0, 0)
        if i0 >= i1:
            continue
        precip[i0:i1] += storm.total_mm / n
    return WeatherSeries(
        axis=weather.axis,
        precip_mm=precip,
        temp_c=weather.temp_c,
        rh_pct=weather.rh_pct,
        wind_ms=weather.wind_ms,
    )


def build_weather(sc: Scenario) -> WeatherSeries:
    """Truth weather for the whole timeline: training, season, and one
    controller horizon of lookahead past the season end."""
    n_total = sc.training_steps + sc.season_steps + sc.mpc.horizon
    base = synth_weather(sc.weather, n_total, start=sc.start)
    return inject_storms(base, sc.storms, sc.training_steps)


@dataclass
class World:
    scenario: Scenario
    weather: WeatherSeries
    training: HistoryWindow
    season_state: SimState


def build_world(sc: Scenario, weather: WeatherSeries | None = None) -> World:
    """Run the exploration schedule over the training segment. Its trajectory
    is the forecaster's training data, its tail is the season's initial
    history, and its final state seeds the season simulation."""
    if weather is None:
        weather = build_weather(sc)
    n_train = sc.training_steps
    rng = np.random.default_rng(sc.seed)
    schedule = sample_schedule(n_train, sc.mpc.constraints, rng, duty=sc.exploration_duty)
    state0 = SimState(swc=sc.initial_swc, oxygen_pct=sc.initial_oxygen_pct)
    traj = simulate(state0, schedule, weather.slice(0, n_train), sc.sim)
    return World(
        scenario=sc,
        weather=weather,
        training=traj.to_history(weather.slice(0, n_train)),
        season_state=traj.final_state,
    )


def fit_forecaster(world: World) -> OxygenForecaster:
    est = OxygenForecaster(**world.scenario.forecaster)
    est.fit(world.training)
    return est


def run_scenario(
    sc: Scenario,
    controller: str | None = None,
    models: ForecastModels | None = None,
    world: World | None = None,
) -> SeasonReport:
    """Build the world if needed, fit the forecaster if the controller wants
    one, and run the season. Passing ``world``/``models`` lets callers reuse
    the expensive parts across controllers."""
    who = controller or sc.controller
    if world is None:
        world = build_world(sc)
    if who == "mpc" and models is None:
        models = fit_forecaster(world).models_
    t_in = models.backbone.config.t_in if models is not None else sc.mpc.horizon
    initial_history = world.training.tail(max(t_in, sc.mpc.horizon))
    return run_closed_loop(
        sim_params=sc.sim,
        initial_state=world.season_state,
        weather=world.weather.slice(
            sc.training_steps, sc.training_steps + sc.season_steps + sc.mpc.horizon
        ),
        noise=sc.noise,
        config=sc.mpc,
        season_steps=sc.season_steps,
        controller=who,
        models=models,
        initial_history=initial_history,
        noise_seed=sc.seed + 1,
    )
