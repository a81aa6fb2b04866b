"""Scenario recipes: validation, JSON round trips, storm injection, and
world construction determinism."""

import dataclasses
import json
from datetime import datetime, timezone

import numpy as np
import pytest

from aquamar.mpc import MpcConfig, weekly_action
from aquamar.planner import PlanConstraints
from aquamar.scenario import (
    STEPS_PER_DAY,
    Scenario,
    Storm,
    build_weather,
    build_world,
    default_scenario,
    fit_forecaster,
    inject_storms,
    run_scenario,
    scenario_from_dict,
    scenario_to_dict,
)
from aquamar.weather import SynthWeatherConfig, synth_weather


def test_storm_validation():
    with pytest.raises(ValueError, match="duration"):
        Storm(start_day=1.0, duration_h=0.0, total_mm=10.0)
    with pytest.raises(ValueError, match="total"):
        Storm(start_day=1.0, duration_h=6.0, total_mm=-1.0)


def test_scenario_validation():
    with pytest.raises(ValueError, match="controller"):
        Scenario(controller="bang-bang")
    with pytest.raises(ValueError, match="season_days"):
        Scenario(season_days=0.0)
    with pytest.raises(ValueError, match="training_days"):
        Scenario(training_days=-1.0)
    with pytest.raises(ValueError, match="exploration_duty"):
        Scenario(exploration_duty=1.5)
    with pytest.raises(ValueError, match="initial_swc"):
        Scenario(initial_swc=0.0)
    with pytest.raises(ValueError, match="initial_oxygen"):
        Scenario(initial_oxygen_pct=30.0)
    with pytest.raises(ValueError, match="unknown forecaster settings"):
        Scenario(forecaster={"window": 3})


def test_scenario_step_counts_and_utc_start():
    sc = Scenario(season_days=0.5, training_days=14.0)
    assert sc.season_steps == 72
    assert sc.training_steps == 14 * STEPS_PER_DAY
    assert sc.start.tzinfo == timezone.utc


def test_scenario_dict_round_trip():
    sc = Scenario(
        controller="weekly",
        season_days=6.0,
        training_days=10.0,
        start=datetime(2024, 2, 1, tzinfo=timezone.utc),
        seed=11,
        storms=(Storm(2.0, 12.0, 25.0),),
        weather=SynthWeatherConfig(rain_rate_per_day=0.2, seed=5),
        mpc=MpcConfig(
            horizon=48,
            replan_every=3,
            constraints=PlanConstraints(
                min_flood=6, max_flood=12, min_idle=6, horizon=48, quantum=2
            ),
        ),
        forecaster={"t_in": 288, "s": 48},
    )
    as_dict = scenario_to_dict(sc)
    assert json.loads(json.dumps(as_dict)) == as_dict
    assert scenario_from_dict(as_dict) == sc


def test_scenario_from_dict_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown keys"):
        scenario_from_dict({"controler": "mpc"})
    with pytest.raises(ValueError, match="weather: unknown keys"):
        scenario_from_dict({"weather": {"rain": 1.0}})
    with pytest.raises(ValueError, match=r"storms\[0\]"):
        scenario_from_dict({"storms": [{"start_day": 1.0, "len_h": 2.0}]})
    with pytest.raises(ValueError, match="mpc.constraints: unknown keys"):
        scenario_from_dict({"mpc": {"constraints": {"mini_flood": 2}}})
    with pytest.raises(ValueError, match="scenario must be a JSON object"):
        scenario_from_dict(["mpc"])


def test_default_scenario_frozen_settings():
    sc = default_scenario()
    assert sc.controller == "mpc"
    assert sc.season_days == 38.0
    assert sc.training_days == 56.0
    assert sc.seed == 7
    assert sc.start == datetime(2023, 1, 3, tzinfo=timezone.utc)
    assert len(sc.storms) == 2
    assert sc.storms[1].total_mm == 50.0
    assert sc.mpc.replan_every == 6
    assert sc.mpc.safety_margin_pct == 0.75
    assert sc.mpc.constraints == PlanConstraints.field_scale()
    assert scenario_from_dict(scenario_to_dict(sc)) == sc


def test_inject_storms_conserves_rain_mass():
    base = synth_weather(SynthWeatherConfig(rain_rate_per_day=0.0, seed=1), 2000)
    storms = (Storm(start_day=2.0, duration_h=12.0, total_mm=30.0),)
    out = inject_storms(base, storms, season_start_step=500)
    added = out.precip_mm - base.precip_mm
    assert np.isclose(added.sum(), 30.0)
    span = np.flatnonzero(added)
    assert span[0] == 500 + 2 * STEPS_PER_DAY
    assert len(span) == 72
    assert np.allclose(added[span], 30.0 / 72)
    assert np.array_equal(out.temp_c, base.temp_c)


def test_inject_storms_outside_axis_is_dropped():
    base = synth_weather(SynthWeatherConfig(rain_rate_per_day=0.0, seed=1), 400)
    out = inject_storms(base, (Storm(start_day=10.0, duration_h=6.0, total_mm=99.0),), 0)
    assert np.array_equal(out.precip_mm, base.precip_mm)


def test_inject_storms_clipped_at_axis_end():
    base = synth_weather(SynthWeatherConfig(rain_rate_per_day=0.0, seed=1), 300)
    # 12 h = 72 steps, but only 12 steps remain past the start index.
    out = inject_storms(base, (Storm(start_day=2.0, duration_h=12.0, total_mm=36.0),), 0)
    added = out.precip_mm - base.precip_mm
    assert np.isclose(added.sum(), 36.0 * 12 / 72)


def small_scenario(**over) -> Scenario:
    base = dict(
        controller="never",
        season_days=1.0,
        training_days=7.0,
        seed=5,
        weather=SynthWeatherConfig(rain_rate_per_day=0.05, seed=2),
        mpc=MpcConfig(
            horizon=48,
            replan_every=6,
            constraints=PlanConstraints(
                min_flood=6, max_flood=12, min_idle=6, horizon=48, quantum=2
            ),
        ),
    )
    base.update(over)
    return Scenario(**base)


def test_build_weather_covers_lookahead():
    sc = small_scenario()
    weather = build_weather(sc)
    assert weather.axis.count == sc.training_steps + sc.season_steps + sc.mpc.horizon
    assert weather.axis.start == sc.start


def test_build_world_shapes_and_determinism():
    sc = small_scenario()
    a = build_world(sc)
    b = build_world(sc)
    assert len(a.training) == sc.training_steps
    assert a.training.axis.start == sc.start
    assert set(np.unique(a.training.flood)) <= {0.0, 1.0}
    assert a.training.flood.sum() > 0
    assert np.array_equal(a.training.oxygen_pct, b.training.oxygen_pct)
    assert a.season_state == b.season_state
    c = build_world(dataclasses.replace(sc, seed=6))
    assert not np.array_equal(a.training.flood, c.training.flood)


def test_exploration_duty_is_roughly_respected():
    sc = small_scenario(training_days=14.0, exploration_duty=0.25)
    world = build_world(sc)
    duty = world.training.flood.mean()
    assert 0.1 < duty < 0.4


def test_fit_forecaster_uses_scenario_settings():
    sc = small_scenario(
        training_days=14.0,
        forecaster={
            "t_in": 288,
            "s": 144,
            "train_stride": 48,
            "backtest_windows": 8,
            "backtest_stride": 24,
        },
    )
    est = fit_forecaster(build_world(sc))
    assert est.t_in == 288
    assert est.models_.backbone.config.s == 144
    assert est.models_.causal.config.n_windows == 8


def test_run_scenario_never_and_weekly(world14):
    sc = world14.scenario
    never = run_scenario(sc, controller="never", world=world14)
    assert len(never.oxygen) == sc.season_steps
    assert np.all(never.flood == 0)

    weekly = run_scenario(sc, controller="weekly", world=world14)
    season_axis = weekly.axis
    expected = [weekly_action(season_axis.timestamp(t)) for t in range(sc.season_steps)]
    assert list(weekly.flood) == expected

    again = run_scenario(sc, controller="weekly", world=world14)
    assert np.array_equal(weekly.oxygen.values, again.oxygen.values)
    assert weekly.odr == again.odr
