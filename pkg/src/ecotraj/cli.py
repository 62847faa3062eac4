"""``eco-traj`` command line: fit, run, matrix, plotdata."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .engine_map import load_engine_map
from .environment import ROADS, elevation_at, load_driving_cycle
from .experiments import (
    BUNDLED_CYCLES,
    CycleSpec,
    ScenarioConfig,
    bundled_map_paths,
    load_params_file,
    run_matrix,
    write_reports,
)
from .fuel_model import COEFF_NAMES, fit_fuel_model, optimize_gears
from .presets import FUELS, TRUCK, VEHICLES
from .sim import EpisodeConfig, leader_metrics, run_episode, write_metrics_json

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"file not found: {p}")
    return p


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# fit ---------------------------------------------------------------------
def cmd_fit(args) -> int:
    out = Path(args.out)
    if args.preset:
        coeffs = FUELS[args.preset]
        coeffs.to_json(out, {"source": "preset", "preset": args.preset})
        print(json.dumps({n: getattr(coeffs, n) for n in COEFF_NAMES}, indent=2))
        return EXIT_OK
    if args.map:
        map_path = _require(args.map)
        if args.torque:
            torque_path = _require(args.torque)
        else:
            torque_path = _require(map_path.with_name(map_path.stem.replace("_map", "") + "_torque.csv"))
    else:
        map_path, torque_path = bundled_map_paths()
    params = load_params_file(_require(args.params)) if args.params else TRUCK
    engine_map = load_engine_map(map_path, torque_path)
    samples = optimize_gears(engine_map, params)
    coeffs, report = fit_fuel_model(samples)
    provenance = {
        "map_file": str(map_path),
        "map_sha256": _sha256(map_path),
        "torque_file": str(torque_path),
        "torque_sha256": _sha256(torque_path),
        "grid": {"v": [0.5, 30.0, 0.5], "a": [-1.0, 2.0, 0.1]},
        "fit_report": report.to_dict(),
    }
    coeffs.to_json(out, provenance)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


# run ---------------------------------------------------------------------
def _load_cycle(source: str, dt: float, repeat: int = 1):
    spec = CycleSpec(source, repeat)
    if source not in BUNDLED_CYCLES:
        _require(source)
    return spec.load(dt)


def cmd_run(args) -> int:
    base = ScenarioConfig.load(args.config) if args.config else ScenarioConfig()
    vehicle = args.vehicle or base.vehicles[0]
    method = args.method or base.methods[0]
    horizon = args.horizon if args.horizon is not None else base.horizons[0]
    if args.cycle:
        cycle = _load_cycle(args.cycle, base.dt, args.repeat)
    else:
        cycle = base.cycles[0].load(base.dt)
    road = ROADS[args.road] if args.road else base.roads[0]
    flag = base.slope_prediction[0] if args.slope_prediction is None else args.slope_prediction
    if vehicle not in VEHICLES and not base.params_file:
        raise UsageError(f"unknown vehicle {vehicle!r}")
    cfg = EpisodeConfig(
        vehicle=vehicle, method=method, cycle=cycle, road=road, horizon=horizon, dt=base.dt,
        use_slope_prediction=flag, d_init=base.d_init, time_headway=base.time_headway,
        params=base.vehicle_params(vehicle), fuel=base.fuel(vehicle), solver=base.solver,
    )
    metrics, log = run_episode(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.agent_id}_{cycle.name}_{road.name}"
    log.write_csv(out / f"{stem}.csv")
    lead = leader_metrics(log)
    write_metrics_json(metrics, out / f"{stem}.json", {
        "agent_id": cfg.agent_id, "cycle": cycle.name, "road": road.name, "fail_step": log.fail_step,
        "fail_reason": log.fail_reason, "leader_fuel_efficiency": lead.fuel_efficiency,
    })
    print(json.dumps(metrics.to_dict(), indent=2))
    return EXIT_OK if metrics.completed and metrics.constraint_violation_count == 0 else EXIT_FAIL


# matrix ------------------------------------------------------------------
def _apply_overrides(config: ScenarioConfig, args) -> ScenarioConfig:
    kw = {}
    if args.vehicles:
        kw["vehicles"] = tuple(args.vehicles)
    if args.methods:
        kw["methods"] = tuple(args.methods)
    if args.horizons:
        kw["horizons"] = tuple(args.horizons)
    if args.roads:
        kw["roads"] = tuple(ROADS[r] for r in args.roads)
    if args.cycles:
        kw["cycles"] = tuple(CycleSpec(c) for c in args.cycles)
    if args.no_slope_prediction_runs:
        kw["slope_prediction"] = (True,)
    if args.out:
        kw["output_dir"] = args.out
    if args.no_timing:
        kw["record_timing"] = False
    if args.logs:
        kw["write_logs"] = True
    return replace(config, **kw) if kw else config


def cmd_matrix(args) -> int:
    config = ScenarioConfig.load(args.config) if args.config else ScenarioConfig()
    config = _apply_overrides(config, args)
    if args.dump_config:
        sys.stdout.write(config.to_toml())
        return EXIT_OK
    try:
        config.check_files()
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc

    def progress(res):
        status = "ok" if res.completed else f"incomplete at step {res.fail_step}: {res.fail_reason}"
        print(f"{res.combo.agent_id} {res.cycle} {res.road}: {status}", file=sys.stderr, flush=True)

    report = run_matrix(config, workers=args.workers, progress=None if args.quiet else progress)
    paths = write_reports(report, config.output_dir)
    for name, p in paths.items():
        print(f"{name}: {p}")
    bad = report.safety_failures()
    for e in bad:
        print(f"safety violation: {e.combo.agent_id} {e.cycle} {e.road} ({e.violations} steps)", file=sys.stderr)
    return EXIT_OK if report.ok else EXIT_FAIL


# plotdata ----------------------------------------------------------------
def _read_log(path):
    with open(_require(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise UsageError(f"empty log: {path}")
    return {k: np.array([float(r[k]) if r[k] != "" else np.nan for r in rows]) for k in rows[0]}


def cmd_plotdata(args) -> int:
    road = ROADS[args.road]
    if args.cycle in BUNDLED_CYCLES:
        cycle = CycleSpec(args.cycle).load(args.dt)
    else:
        cycle = load_driving_cycle(_require(args.cycle), args.dt)
    series = {}
    for item in args.logs:
        label, _, path = item.rpartition("=")
        label = label or Path(path).stem
        series[label] = _read_log(path)
    n = max(len(s["t"]) for s in series.values()) if series else len(cycle.speed) - 1
    n = min(n, len(cycle.speed) - 1)
    t = np.arange(n) * args.dt
    lead_s = cycle.distance[:n] + args.d_init
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = ["t", "lead_v", "elevation_m"]
    for label in series:
        header += [f"v_{label}", f"fuel_cum_{label}"]
    elevation = elevation_at(lead_s, road)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(n):
            row = [repr(float(t[i])), repr(float(cycle.speed[i])), repr(float(elevation[i]))]
            for s in series.values():
                if i < len(s["t"]):
                    row += [repr(float(s["v"][i])), repr(float(s["fuel_cum"][i]))]
                else:
                    row += ["", ""]
            w.writerow(row)
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eco-traj", description="Eco-driving trajectory optimisation experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit fuel-model coefficients from an engine map")
    f.add_argument("--map", help="efficiency grid CSV (default: bundled synthetic truck map)")
    f.add_argument("--torque", help="full-load torque curve CSV (default: <map>_torque.csv next to --map)")
    f.add_argument("--params", help="vehicle parameter TOML (default: truck preset)")
    f.add_argument("--preset", choices=sorted(FUELS), help="write the built-in coefficients instead of fitting")
    f.add_argument("--out", required=True, help="coefficients JSON to write")
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("run", help="run one closed-loop episode")
    r.add_argument("--config", help="scenario TOML; its first entry of each list is used")
    r.add_argument("--vehicle", choices=sorted(VEHICLES))
    r.add_argument("--method", choices=["QP", "SQP", "NLP"])
    r.add_argument("--horizon", type=float)
    r.add_argument("--cycle", help=f"cycle CSV or one of {', '.join(BUNDLED_CYCLES)}")
    r.add_argument("--repeat", type=int, default=1)
    r.add_argument("--road", choices=sorted(ROADS))
    g = r.add_mutually_exclusive_group()
    g.add_argument("--slope-prediction", dest="slope_prediction", action="store_true", default=None)
    g.add_argument("--no-slope-prediction", dest="slope_prediction", action="store_false")
    r.add_argument("--out", default="run_out")
    r.set_defaults(func=cmd_run)

    m = sub.add_parser("matrix", help="run the experiment matrix and write aggregate reports")
    m.add_argument("--config", help="scenario TOML (default: built-in full matrix)")
    m.add_argument("--out", help="output directory (overrides [output] dir)")
    m.add_argument("--vehicles", nargs="+", choices=sorted(VEHICLES))
    m.add_argument("--methods", nargs="+", choices=["QP", "SQP", "NLP"])
    m.add_argument("--horizons", nargs="+", type=float)
    m.add_argument("--roads", nargs="+", choices=sorted(ROADS))
    m.add_argument("--cycles", nargs="+", help="cycle CSVs or bundled names")
    m.add_argument("--no-slope-prediction-runs", action="store_true", help="skip the F variants")
    m.add_argument("--workers", type=int, help="worker processes (default: $ECOTRAJ_WORKERS or 1)")
    m.add_argument("--no-timing", action="store_true", help="leave wall-clock columns empty")
    m.add_argument("--logs", action="store_true", help="also write per-episode logs and metrics JSON")
    m.add_argument("--dump-config", action="store_true", help="print the effective config as TOML and exit")
    m.add_argument("--quiet", action="store_true")
    m.set_defaults(func=cmd_matrix)

    d = sub.add_parser("plotdata", help="merge episode logs into one time-indexed CSV")
    d.add_argument("logs", nargs="*", help="episode log CSVs, optionally LABEL=path")
    d.add_argument("--cycle", required=True, help="cycle CSV or bundled name the logs were run on")
    d.add_argument("--road", choices=sorted(ROADS), default="flat")
    d.add_argument("--dt", type=float, default=0.1)
    d.add_argument("--d-init", type=float, default=50.0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_plotdata)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"eco-traj: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"eco-traj: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
