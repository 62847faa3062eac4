"""Experiment matrix: scenario configs, batch execution and aggregate reports."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import tomlkit

from .environment import ROADS, DrivingCycle, SlopeProfile, load_driving_cycle, slope_at
from .fuel_model import FuelCoefficients
from .presets import D_INIT, FUELS, TIME_HEADWAY, VEHICLES
from .sim import (
    METHODS,
    EgoState,
    EpisodeConfig,
    EpisodeMetrics,
    agent_name,
    leader_name,
    leader_traction,
    meter_fuel,
    metrics_from_totals,
    run_episode,
    write_metrics_json,
)
from .solvers.common import SolverConfig
from .vehicle import VehicleParams, derived_coeffs

WORKERS_ENV = "ECOTRAJ_WORKERS"
BUNDLED_CYCLES = ("highway", "urban")

COMPREHENSIVE_COLUMNS = (
    "agent_id", "travel_time_s", "travel_distance_m", "fuel_consumption_ml", "average_fuel_rate_ml_s",
    "fuel_efficiency_l_100km", "average_speed_m_s", "efficiency_improvement_pct", "average_solve_time_ms",
    "episodes", "completed", "violations",
)
NLP_VS_QP_COLUMNS = ("agent_id", "speed_loss_pct", "efficiency_improvement_pct", "solve_time_multiple")
EPISODE_COLUMNS = (
    "agent_id", "cycle", "road", "steps", "completed", "fail_step", "travel_time_s", "travel_distance_m",
    "fuel_consumption_ml", "fuel_efficiency_l_100km", "violations", "min_gap_m", "max_gap_m", "solve_ms_total",
)


def bundled_cycle_path(name: str) -> Path:
    if name not in BUNDLED_CYCLES:
        raise ValueError(f"no bundled cycle {name!r}; choose from {BUNDLED_CYCLES}")
    return Path(str(resources.files("ecotraj") / "data" / "cycles" / f"synthetic_{name}.csv"))


def bundled_map_paths() -> tuple[Path, Path]:
    base = resources.files("ecotraj") / "data" / "maps"
    return Path(str(base / "synthetic_truck_map.csv")), Path(str(base / "synthetic_truck_torque.csv"))


@dataclass(frozen=True)
class CycleSpec:
    """A cycle file (or bundled name) and how many times to chain it."""

    source: str
    repeat: int = 1

    def __post_init__(self):
        if self.repeat < 1:
            raise ValueError("repeat must be >= 1")

    @property
    def path(self) -> Path:
        return bundled_cycle_path(self.source) if self.source in BUNDLED_CYCLES else Path(self.source)

    @property
    def label(self) -> str:
        stem = self.source if self.source in BUNDLED_CYCLES else Path(self.source).stem
        return stem if self.repeat == 1 else f"{stem}x{self.repeat}"

    def load(self, dt: float) -> DrivingCycle:
        return load_driving_cycle(self.path, dt, name=self.label).repeated(self.repeat)


@dataclass(frozen=True)
class ScenarioConfig:
    vehicles: tuple[str, ...] = ("truck", "sedan")
    cycles: tuple[CycleSpec, ...] = (CycleSpec("highway"), CycleSpec("urban"))
    roads: tuple[SlopeProfile, ...] = (ROADS["flat"], ROADS["rolling"], ROADS["steep"])
    methods: tuple[str, ...] = ("QP", "SQP", "NLP")
    horizons: tuple[float, ...] = (5.0, 10.0)
    slope_prediction: tuple[bool, ...] = (True, False)
    dt: float = 0.1
    d_init: float = D_INIT
    time_headway: float = TIME_HEADWAY
    solver: SolverConfig = field(default_factory=SolverConfig)
    params_file: str = ""
    fuel_file: str = ""
    output_dir: str = "results"
    record_timing: bool = True
    write_logs: bool = False

    def __post_init__(self):
        for name in ("vehicles", "cycles", "roads", "methods", "horizons", "slope_prediction"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        for m in self.methods:
            if m not in METHODS:
                raise ValueError(f"unknown method {m!r}")
        if not self.params_file:
            for v in self.vehicles:
                if v not in VEHICLES:
                    raise ValueError(f"unknown vehicle preset {v!r}")
        elif len(self.vehicles) != 1:
            raise ValueError("a params_file describes exactly one vehicle")
        names = [r.name for r in self.roads]
        if any(not n for n in names) or len(set(names)) != len(names):
            raise ValueError("roads need unique non-empty names")

    def check_files(self) -> None:
        for c in self.cycles:
            if not c.path.exists():
                raise FileNotFoundError(f"cycle file not found: {c.path}")
        for f in (self.params_file, self.fuel_file):
            if f and not Path(f).exists():
                raise FileNotFoundError(f"file not found: {f}")

    def vehicle_params(self, vehicle: str) -> VehicleParams:
        if self.params_file:
            return load_params_file(self.params_file)
        return VEHICLES[vehicle]

    def fuel(self, vehicle: str) -> FuelCoefficients:
        return FuelCoefficients.from_json(self.fuel_file) if self.fuel_file else FUELS[vehicle]

    # serialisation -------------------------------------------------------
    def to_dict(self) -> dict:
        s = self.solver
        return {
            "scenario": {
                "vehicles": list(self.vehicles),
                "methods": list(self.methods),
                "horizons": [float(h) for h in self.horizons],
                "slope_prediction": list(self.slope_prediction),
                "dt": self.dt,
                "d_init": self.d_init,
                "time_headway": self.time_headway,
                "params_file": self.params_file,
                "fuel_file": self.fuel_file,
            },
            "cycles": [{"source": c.source, "repeat": c.repeat} for c in self.cycles],
            "roads": [r.to_dict() for r in self.roads],
            "solver": {
                "max_iterations": s.max_iterations,
                "feasibility_tolerance": s.feasibility_tolerance,
                "optimality_tolerance": s.optimality_tolerance,
                "sqp_step_tolerance": s.sqp_step_tolerance,
                "sqp_max_outer_iterations": s.sqp_max_outer_iterations,
                "sqp_damping": s.sqp_damping,
                **({"time_limit": s.time_limit} if s.time_limit is not None else {}),
            },
            "output": {
                "dir": self.output_dir,
                "record_timing": self.record_timing,
                "write_logs": self.write_logs,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {"scenario", "cycles", "roads", "solver", "output"}
        if set(d) - known:
            raise ValueError(f"unknown config section(s): {sorted(set(d) - known)}")
        sc = dict(d.get("scenario", {}))
        kw = {}
        for key in ("vehicles", "methods", "horizons", "slope_prediction"):
            if key in sc:
                kw[key] = tuple(sc.pop(key))
        if "horizons" in kw:
            kw["horizons"] = tuple(float(h) for h in kw["horizons"])
        for key in ("dt", "d_init", "time_headway"):
            if key in sc:
                kw[key] = float(sc.pop(key))
        for key in ("params_file", "fuel_file"):
            if key in sc:
                kw[key] = str(sc.pop(key))
        if sc:
            raise ValueError(f"unknown [scenario] key(s): {sorted(sc)}")
        if "cycles" in d:
            kw["cycles"] = tuple(CycleSpec(str(c["source"]), int(c.get("repeat", 1))) for c in d["cycles"])
        if "roads" in d:
            kw["roads"] = tuple(
                ROADS[r] if isinstance(r, str) else SlopeProfile.from_dict(dict(r)) for r in d["roads"]
            )
        if "solver" in d:
            kw["solver"] = SolverConfig(**{k: v for k, v in dict(d["solver"]).items()})
        out = dict(d.get("output", {}))
        if "dir" in out:
            kw["output_dir"] = str(out.pop("dir"))
        for key in ("record_timing", "write_logs"):
            if key in out:
                kw[key] = bool(out.pop(key))
        if out:
            raise ValueError(f"unknown [output] key(s): {sorted(out)}")
        return cls(**kw)

    def to_toml(self) -> str:
        return tomlkit.dumps(self.to_dict())

    @classmethod
    def from_toml(cls, text: str) -> "ScenarioConfig":
        return cls.from_dict(tomlkit.parse(text).unwrap())

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        return cls.from_toml(path.read_text())


def load_params_file(path) -> VehicleParams:
    """Vehicle parameters from a TOML file: a preset name plus overrides.

    ``preset = "truck"`` at top level (optional) and any VehicleParams field
    names under ``[vehicle]`` or at top level.
    """
    doc = tomlkit.parse(Path(path).read_text()).unwrap()
    base = {}
    preset = doc.pop("preset", None)
    if preset is not None:
        if preset not in VEHICLES:
            raise ValueError(f"unknown preset {preset!r} in {path}")
        base = VEHICLES[preset].to_dict()
    base.update(doc.pop("vehicle", {}))
    base.update(doc)
    return VehicleParams.from_dict(base)


@dataclass(frozen=True)
class Combination:
    vehicle: str
    method: str
    horizon: float
    slope_prediction: bool
    cycle_index: int
    road_index: int

    @property
    def agent_id(self) -> str:
        return agent_name(self.vehicle, self.method, self.horizon, self.slope_prediction)


def combinations(config: ScenarioConfig) -> list[Combination]:
    """Run matrix in a fixed order. QP never sees the slope, so it runs once
    per horizon (with the prediction flag set)."""
    out = []
    for vehicle in config.vehicles:
        for method in config.methods:
            for h in config.horizons:
                flags = (True,) if method == "QP" else config.slope_prediction
                for flag in flags:
                    for ci in range(len(config.cycles)):
                        for ri in range(len(config.roads)):
                            out.append(Combination(vehicle, method, float(h), bool(flag), ci, ri))
    return out


@dataclass
class EpisodeResult:
    combo: Combination
    cycle: str
    road: str
    metrics: EpisodeMetrics | None
    steps: int
    completed: bool
    fail_step: int | None
    fail_reason: str
    violations: int
    min_gap: float
    max_gap: float
    solve_ms_total: float
    log_rows: dict | None = None


def _episode_config(config: ScenarioConfig, combo: Combination, cycle: DrivingCycle) -> EpisodeConfig:
    return EpisodeConfig(
        vehicle=combo.vehicle,
        method=combo.method,
        cycle=cycle,
        road=config.roads[combo.road_index],
        horizon=combo.horizon,
        dt=config.dt,
        use_slope_prediction=combo.slope_prediction,
        d_init=config.d_init,
        time_headway=config.time_headway,
        params=config.vehicle_params(combo.vehicle),
        fuel=config.fuel(combo.vehicle),
        solver=config.solver,
    )


def run_combination(config: ScenarioConfig, combo: Combination) -> EpisodeResult:
    cycle_spec = config.cycles[combo.cycle_index]
    cycle = cycle_spec.load(config.dt)
    road = config.roads[combo.road_index]
    try:
        metrics, log = run_episode(_episode_config(config, combo, cycle))
    except Exception as exc:  # recorded per combination; the matrix goes on
        return EpisodeResult(combo, cycle_spec.label, road.name, None, 0, False, 0, f"{type(exc).__name__}: {exc}",
                             0, float("nan"), float("nan"), 0.0)
    gaps = log.gaps()
    rows = None
    if config.write_logs:
        rows = {k: np.array(v) for k, v in log.columns.items()}
    return EpisodeResult(
        combo, cycle_spec.label, road.name, metrics, log.steps, log.completed, log.fail_step, log.fail_reason,
        log.violation_count(), float(gaps.min()), float(gaps.max()), float(np.sum(log.columns["solve_ms"])), rows,
    )


def _run_one(args):
    return run_combination(*args)


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from exc
    return max(1, n)


def leader_totals(config: ScenarioConfig, vehicle: str, cycle: DrivingCycle, road: SlopeProfile):
    """(time, distance, fuel) of the leading vehicle over a whole cycle."""
    params = config.vehicle_params(vehicle)
    fuel = config.fuel(vehicle)
    coeffs = derived_coeffs(params)
    dt = config.dt
    s = cycle.distance + config.d_init
    total = 0.0
    for k in range(len(cycle.speed) - 1):
        u = leader_traction(cycle.accel[k], cycle.speed[k], slope_at(s[k], road), coeffs)
        total += meter_fuel(EgoState(float(s[k + 1]), float(cycle.speed[k + 1]), u), fuel, dt)
    return cycle.duration, float(cycle.distance[-1]), total


@dataclass
class AggregateRow:
    agent_id: str
    time: float
    distance: float
    fuel: float
    solve_ms: float
    steps: int
    episodes: int
    completed: int
    violations: int
    metrics: EpisodeMetrics | None = None


@dataclass
class MatrixReport:
    config: ScenarioConfig
    episodes: list[EpisodeResult]
    rows: list[AggregateRow]
    comparisons: list[dict]

    @property
    def all_completed(self) -> bool:
        return all(e.completed for e in self.episodes)

    def safety_failures(self) -> list[EpisodeResult]:
        return [e for e in self.episodes if e.completed and e.combo.method in ("QP", "NLP") and e.violations > 0]

    @property
    def ok(self) -> bool:
        return self.all_completed and not self.safety_failures()

    def row(self, agent_id: str) -> AggregateRow:
        for r in self.rows:
            if r.agent_id == agent_id:
                return r
        raise KeyError(agent_id)


def _aggregate(config: ScenarioConfig, episodes: list[EpisodeResult]) -> tuple[list[AggregateRow], list[dict]]:
    rows: list[AggregateRow] = []
    cycles = [c.load(config.dt) for c in config.cycles]
    for vehicle in config.vehicles:
        lt = ld = lf = 0.0
        for cycle in cycles:
            for road in config.roads:
                t, d, f = leader_totals(config, vehicle, cycle, road)
                lt, ld, lf = lt + t, ld + d, lf + f
        lead = AggregateRow(leader_name(vehicle), lt, ld, lf, 0.0, 0, len(cycles) * len(config.roads),
                            len(cycles) * len(config.roads), 0)
        lead.metrics = metrics_from_totals(lt, ld, lf)
        rows.append(lead)
        by_agent: dict[str, AggregateRow] = {}
        for e in episodes:
            if e.combo.vehicle != vehicle:
                continue
            r = by_agent.setdefault(e.combo.agent_id, AggregateRow(e.combo.agent_id, 0, 0, 0, 0, 0, 0, 0, 0))
            r.episodes += 1
            r.completed += int(e.completed)
            r.violations += e.violations
            if e.metrics is not None:
                r.time += e.metrics.travel_time
                r.distance += e.metrics.travel_distance
                r.fuel += e.metrics.fuel_consumption
                r.solve_ms += e.solve_ms_total
                r.steps += e.steps
        for r in by_agent.values():
            if r.distance > 0:
                r.metrics = metrics_from_totals(
                    r.time, r.distance, r.fuel, leader_efficiency=lead.metrics.fuel_efficiency,
                    average_solve_time=r.solve_ms / r.steps if r.steps else float("nan"),
                    violations=r.violations, completed=r.completed == r.episodes,
                )
            rows.append(r)

    comparisons = []
    index = {r.agent_id: r for r in rows}
    for vehicle in config.vehicles:
        for h in config.horizons:
            qp = index.get(agent_name(vehicle, "QP", h))
            if qp is None or qp.metrics is None:
                continue
            comparisons.append({"agent_id": qp.agent_id, "speed_loss_pct": 0.0, "efficiency_improvement_pct": 0.0,
                                "solve_time_multiple": 1.0})
            for flag in config.slope_prediction:
                nlp = index.get(agent_name(vehicle, "NLP", h, flag))
                if nlp is None or nlp.metrics is None:
                    continue
                q, n = qp.metrics, nlp.metrics
                comparisons.append({
                    "agent_id": nlp.agent_id,
                    "speed_loss_pct": (q.average_speed - n.average_speed) / q.average_speed * 100.0,
                    "efficiency_improvement_pct": (q.fuel_efficiency - n.fuel_efficiency) / q.fuel_efficiency * 100.0,
                    "solve_time_multiple": n.average_solve_time / q.average_solve_time,
                })
    return rows, comparisons


def run_matrix(config: ScenarioConfig, workers: int | None = None, progress=None) -> MatrixReport:
    """Run every combination, aggregate per agent and return the report.

    Aggregates sum time, distance and fuel over cycles and roads and derive
    rates from those sums. Results are ordered by combination regardless of
    completion order. ``workers`` defaults to the ``ECOTRAJ_WORKERS`` value.
    """
    config.check_files()
    combos = combinations(config)
    workers = worker_count() if workers is None else max(1, int(workers))
    jobs = [(config, c) for c in combos]
    if workers == 1:
        results = []
        for job in jobs:
            results.append(_run_one(job))
            if progress:
                progress(results[-1])
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = []
            for res in pool.map(_run_one, jobs):
                results.append(res)
                if progress:
                    progress(res)
    rows, comparisons = _aggregate(config, results)
    return MatrixReport(config, results, rows, comparisons)


def _fmt(x, timing: bool = False, record_timing: bool = True) -> str:
    if timing and not record_timing:
        return ""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return repr(float(x))


def write_reports(report: MatrixReport, out_dir) -> dict[str, Path]:
    """Write comprehensive.csv, nlp_vs_qp.csv, episodes.csv and, when asked
    for, per-episode logs and metrics JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rt = report.config.record_timing
    paths = {"comprehensive": out / "comprehensive.csv", "nlp_vs_qp": out / "nlp_vs_qp.csv",
             "episodes": out / "episodes.csv"}
    with open(paths["comprehensive"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPREHENSIVE_COLUMNS)
        for r in report.rows:
            m = r.metrics
            if m is None:
                w.writerow([r.agent_id] + [""] * 8 + [r.episodes, r.completed, r.violations])
                continue
            solve = "" if r.agent_id.endswith("-L") else _fmt(m.average_solve_time, True, rt)
            w.writerow([r.agent_id, _fmt(m.travel_time), _fmt(m.travel_distance), _fmt(m.fuel_consumption),
                        _fmt(m.average_fuel_rate), _fmt(m.fuel_efficiency), _fmt(m.average_speed),
                        _fmt(m.efficiency_improvement_vs_leading), solve, r.episodes, r.completed, r.violations])
    with open(paths["nlp_vs_qp"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(NLP_VS_QP_COLUMNS)
        for c in report.comparisons:
            w.writerow([c["agent_id"], _fmt(c["speed_loss_pct"]), _fmt(c["efficiency_improvement_pct"]),
                        _fmt(c["solve_time_multiple"], True, rt)])
    with open(paths["episodes"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_COLUMNS)
        for e in report.episodes:
            m = e.metrics
            vals = [m.travel_time, m.travel_distance, m.fuel_consumption, m.fuel_efficiency] if m else [None] * 4
            w.writerow([e.combo.agent_id, e.cycle, e.road, e.steps, _fmt(e.completed), _fmt(e.fail_step), *map(_fmt, vals),
                        e.violations, _fmt(e.min_gap), _fmt(e.max_gap), _fmt(e.solve_ms_total, True, rt)])
    if report.config.write_logs:
        logs = out / "logs"
        logs.mkdir(exist_ok=True)
        for e in report.episodes:
            if e.log_rows is None or e.metrics is None:
                continue
            stem = f"{e.combo.agent_id}_{e.cycle}_{e.road}"
            with open(logs / f"{stem}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                cols = list(e.log_rows)
                w.writerow(cols)
                for i in range(e.steps):
                    w.writerow([_fmt(e.log_rows[c][i], c == "solve_ms", rt) for c in cols])
            extra = {"agent_id": e.combo.agent_id, "cycle": e.cycle, "road": e.road,
                     "fail_step": e.fail_step, "fail_reason": e.fail_reason}
            metrics = e.metrics if rt else replace(e.metrics, average_solve_time=float("nan"))
            write_metrics_json(metrics, logs / f"{stem}.json", extra)
    return paths
