"""Command-line entry points.

Subcommands: simulate, train, control, season, enumerate. Every command is
deterministic given its files, flags, and seeds; commands that write files
also drop a sidecar manifest recording inputs, seeds, and wall-clock time so
a run can be reproduced later. The manifest is run metadata, not a data
product, so its duration field is the one thing that varies between reruns.

Exit status: 0 success, 1 validation or usage problem, 2 I/O problem.
Set AQUAMAR_THREADS to cap internal parallelism during plan evaluation.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time

import numpy as np

from . import io
from .core import validate_frame
from .forecast import OxygenForecaster, load_models, rolling_backtest
from .mpc import MpcConfig, control_step, decision_log_line
from .planner import PlanConstraints, count_plans, enumerate_plans, InitialRunState
from .scenario import Scenario, run_scenario, build_world, fit_forecaster, scenario_from_dict
from .sim import SimState, default_params, load_params, simulate
from .weather import WeatherFormatError, load_csv as load_weather_csv
from . import __version__

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the convention here reserves 2 for I/O.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_weather(path):
    with open(path, newline="") as fh:
        return load_weather_csv(fh)


def _manifest(command: str, args_ns, seeds: dict, outputs: list, t0: float) -> io.RunManifest:
    inputs = {}
    for key in ("params", "plan", "weather", "history", "model", "config", "scenario"):
        val = getattr(args_ns, key, None)
        if val:
            inputs[key] = os.path.abspath(val)
    return io.RunManifest(
        command=command,
        inputs=inputs,
        seeds=seeds,
        outputs=[os.path.abspath(str(p)) for p in outputs],
        artifact_version=__version__,
        duration_s=round(time.time() - t0, 3),
    )


def cmd_simulate(args) -> int:
    t0 = time.time()
    params = load_params(args.params) if args.params else default_params()
    plan = io.load_plan(args.plan)
    weather = _load_weather(args.weather)
    if len(plan.steps) != weather.axis.count:
        raise ValueError(
            f"plan has {len(plan.steps)} steps but weather has {weather.axis.count} rows"
        )
    initial = SimState(swc=params.theta_fc, oxygen_pct=params.o_atm_pct)
    traj = simulate(initial, plan, weather, params)
    if args.out:
        io.write_trajectory(traj, args.out)
        io.write_manifest(_manifest("simulate", args, {}, [args.out], t0), args.out + ".manifest.json")
    else:
        io.write_trajectory(traj, sys.stdout)
    return EXIT_OK


def cmd_train(args) -> int:
    t0 = time.time()
    history = io.load_history(args.history)
    report = validate_frame(history)
    if not report.ok:
        raise ValueError("history fails validation: " + "; ".join(report.violations))

    settings = io.load_json(args.config) if args.config else {}
    if not isinstance(settings, dict):
        raise ValueError("config must be a JSON object of forecaster settings")
    unknown = set(settings) - set(OxygenForecaster().get_params())
    if unknown:
        raise ValueError(f"unknown forecaster settings: {sorted(unknown)}")
    est = OxygenForecaster(**settings)
    est.fit(history)
    est.save(args.model)

    rows = rolling_backtest(
        est.models_, history, n_windows=est.backtest_windows, stride=est.backtest_stride
    )
    calibrated = [r["calibrated"] for r in rows]
    preliminary = [r["preliminary"] for r in rows]
    wins = sum(1 for c, p in zip(calibrated, preliminary) if c.mse <= p.mse)

    def _agg(metrics):
        return {
            name: float(np.median([getattr(m, name) for m in metrics]))
            for name in ("mse", "mae", "pte_hours", "pve")
        }

    out = {
        "windows": len(rows),
        "calibrated": _agg(calibrated),
        "uncalibrated": _agg(preliminary),
        "calibrated_wins_frac": wins / len(rows),
        "per_window": [
            {
                "origin": r["origin"],
                "calibrated": dataclasses.asdict(r["calibrated"]),
                "uncalibrated": dataclasses.asdict(r["preliminary"]),
            }
            for r in rows
        ],
    }
    if args.out:
        io.write_json(out, args.out)
        outputs = [args.model, args.out]
        io.write_manifest(_manifest("train", args, {}, outputs, t0), args.out + ".manifest.json")
    else:
        io.write_json(out, sys.stdout)
    print(
        f"model saved to {args.model}; calibrated beats uncalibrated on "
        f"{wins}/{len(rows)} windows",
        file=sys.stderr,
    )
    return EXIT_OK


def _mpc_config(raw: dict) -> MpcConfig:
    raw = dict(raw)
    if "constraints" in raw:
        raw["constraints"] = PlanConstraints(**raw["constraints"])
    return MpcConfig(**raw)


def cmd_control(args) -> int:
    t0 = time.time()
    models = load_models(args.model)
    history = io.load_history(args.history)
    clue = _load_weather(args.weather)
    config = _mpc_config(io.load_json(args.config)) if args.config else MpcConfig()
    decision = control_step(history, clue, models, config)
    line = decision_log_line(decision)
    print(line)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(line + "\n")
        io.write_manifest(_manifest("control", args, {}, [args.out], t0), args.out + ".manifest.json")
    return EXIT_OK


def cmd_season(args) -> int:
    t0 = time.time()
    sc = scenario_from_dict(io.load_json(args.scenario))
    if args.seed is not None:
        sc = dataclasses.replace(sc, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)

    world = build_world(sc)
    models = fit_forecaster(world).models_ if sc.controller == "mpc" else None
    report = run_scenario(sc, world=world, models=models)

    summary = {
        "controller": sc.controller,
        "seed": sc.seed,
        "season_days": sc.season_days,
        "odr": report.odr,
        "recharge_in_per_week": report.recharge_in_per_week,
        "flood_mm": report.flood_mm,
        "min_oxygen_pct": float(np.min(report.oxygen.values)),
        "decisions": len(report.decisions),
        "fallbacks": sum(1 for d in report.decisions if d.fallback),
    }
    paths = {
        "report": os.path.join(args.out, "report.json"),
        "decisions": os.path.join(args.out, "decisions.jsonl"),
        "plotdata": os.path.join(args.out, "plotdata.csv"),
    }
    io.write_json(summary, paths["report"])
    io.write_decisions(report.decisions, paths["decisions"])
    io.write_plotdata(report, paths["plotdata"])
    io.write_manifest(
        _manifest("season", args, {"seed": sc.seed}, list(paths.values()), t0),
        os.path.join(args.out, "manifest.json"),
    )
    print(
        f"controller={sc.controller} odr={report.odr:.5f} "
        f"recharge_in_per_week={report.recharge_in_per_week:.3f} flood_mm={report.flood_mm:.1f}"
    )
    return EXIT_OK


def cmd_enumerate(args) -> int:
    constraints = PlanConstraints(
        horizon=args.horizon,
        min_flood=args.min_flood,
        max_flood=args.max_flood,
        min_idle=args.min_idle,
        quantum=args.quantum,
    )
    init = InitialRunState.idle()
    if args.count:
        print(count_plans(constraints, init))
        return EXIT_OK
    plans = enumerate_plans(constraints, init)
    if args.out:
        with open(args.out, "w") as fh:
            io.write_plans(plans, fh)
    else:
        io.write_plans(plans, sys.stdout)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(
        prog="aquamar",
        description="Flood-for-recharge control tools: soil simulation, oxygen "
        "forecasting, and receding-horizon flood planning.",
        epilog="Set AQUAMAR_THREADS to cap plan-evaluation parallelism.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the soil simulator over a plan and weather file")
    p.add_argument("--params", help="soil parameter file (key = value lines); default built-in set")
    p.add_argument("--plan", required=True, help="plan file: one line of 0/1 characters")
    p.add_argument("--weather", required=True, help="weather CSV (timestamp,precip_mm,temp_c,rh_pct,wind_ms)")
    p.add_argument("--out", help="trajectory CSV path; stdout when omitted")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit the oxygen forecaster on a history CSV")
    p.add_argument("--history", required=True, help="history CSV (timestamp,oxygen_pct,swc,flood,precip_mm,temp_c,rh_pct,wind_ms)")
    p.add_argument("--config", help="JSON file of forecaster settings")
    p.add_argument("--model", required=True, help="output path for the model artifact")
    p.add_argument("--out", help="backtest metrics report JSON; stdout when omitted")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("control", help="one control decision from a model, history, and weather clue")
    p.add_argument("--model", required=True, help="fitted model artifact")
    p.add_argument("--history", required=True, help="recent history CSV")
    p.add_argument("--weather", required=True, help="weather clue CSV covering one horizon")
    p.add_argument("--config", help="JSON file of controller settings")
    p.add_argument("--out", help="also write the decision record to this file")
    p.set_defaults(func=cmd_control)

    p = sub.add_parser("season", help="closed-loop season run from a scenario file")
    p.add_argument("--scenario", required=True, help="scenario JSON")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_season)

    p = sub.add_parser("enumerate", help="list or count admissible flooding plans")
    p.add_argument("--horizon", type=int, default=720)
    p.add_argument("--min-flood", type=int, default=36, dest="min_flood")
    p.add_argument("--max-flood", type=int, default=144, dest="max_flood")
    p.add_argument("--min-idle", type=int, default=144, dest="min_idle")
    p.add_argument("--quantum", type=int, default=6)
    p.add_argument("--count", action="store_true", help="print the plan count instead of plan lines")
    p.add_argument("--out", help="plan listing path; stdout when omitted")
    p.set_defaults(func=cmd_enumerate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (WeatherFormatError, ValueError) as exc:
        print(f"aquamar {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"aquamar {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
