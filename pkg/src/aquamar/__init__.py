"""Flood-recharge control toolkit: soil simulation, long-horizon oxygen
forecasting, constrained plan enumeration, and a receding-horizon controller
that maximizes aquifer recharge while keeping root-zone oxygen safe."""

from .core import (
    O_ATM_PCT,
    VARIATE_NAMES,
    ExogenousClues,
    ForecastMetrics,
    HistoryWindow,
    OxygenTrace,
    TimeAxis,
    ValidationReport,
    forecast_metrics,
    format_timestamp,
    odr,
    parse_timestamp,
    recharge_per_week,
    validate_frame,
)
from .forecast import (
    BackboneConfig,
    BackboneModel,
    CausalConfig,
    CausalEdgeModel,
    CausalModel,
    ForecastModels,
    ForecastResult,
    MultiForecast,
    OxygenForecaster,
    calibrate,
    fit_backbone,
    fit_causal,
    forecast,
    load_models,
    predict_backbone,
    refit,
    save_models,
)
from .mpc import (
    Decision,
    MpcConfig,
    PlanEvaluation,
    SeasonReport,
    control_step,
    evaluate_plan,
    run_closed_loop,
    select_plan,
)
from .planner import (
    FloodingPlan,
    InitialRunState,
    PlanConstraints,
    count_plans,
    enumerate_plans,
    is_valid_plan,
)
from .sim import (
    SimParams,
    SimState,
    SimStepOutput,
    Trajectory,
    default_params,
    default_state,
    load_params,
    parse_params,
    simulate,
    step,
)
from .weather import (
    ForecastNoise,
    SynthWeatherConfig,
    WeatherRecord,
    WeatherSeries,
    load_csv,
    load_forecast_json,
    perturb_forecast,
    synth_weather,
    write_csv,
)

__version__ = "0.1.0"

__all__ = [
    "O_ATM_PCT",
    "VARIATE_NAMES",
    "BackboneConfig",
    "BackboneModel",
    "CausalConfig",
    "CausalEdgeModel",
    "CausalModel",
    "Decision",
    "ExogenousClues",
    "FloodingPlan",
    "ForecastMetrics",
    "ForecastModels",
    "ForecastNoise",
    "ForecastResult",
    "HistoryWindow",
    "InitialRunState",
    "MpcConfig",
    "MultiForecast",
    "OxygenForecaster",
    "OxygenTrace",
    "PlanConstraints",
    "PlanEvaluation",
    "SeasonReport",
    "SimParams",
    "SimState",
    "SimStepOutput",
    "SynthWeatherConfig",
    "TimeAxis",
    "Trajectory",
    "ValidationReport",
    "WeatherRecord",
    "WeatherSeries",
    "calibrate",
    "control_step",
    "count_plans",
    "default_params",
    "default_state",
    "enumerate_plans",
    "evaluate_plan",
    "fit_backbone",
    "fit_causal",
    "forecast",
    "forecast_metrics",
    "format_timestamp",
    "is_valid_plan",
    "load_csv",
    "load_forecast_json",
    "load_models",
    "load_params",
    "odr",
    "parse_params",
    "parse_timestamp",
    "perturb_forecast",
    "predict_backbone",
    "recharge_per_week",
    "refit",
    "run_closed_loop",
    "save_models",
    "select_plan",
    "simulate",
    "step",
    "synth_weather",
    "validate_frame",
    "write_csv",
]
