"""Receding-horizon episode runner, control execution, fuel metering and metrics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .environment import (
    FLAT,
    DrivingCycle,
    LeadState,
    SlopeProfile,
    predict_leading,
    predict_slope_sequence,
    shifted_reference,
    slope_at,
)
from .fuel_model import FuelCoefficients, fuel_rate_hat
from .ocp import HorizonSpec, build_nlp, build_qp, headway_gap
from .presets import D_INIT, FUELS, METHOD_WEIGHTS, TIME_HEADWAY, VEHICLES
from .solvers.admm import ADMMSolver
from .solvers.common import HorizonSolution, SolverConfig
from .solvers.ipm import NLPSolver, solve_nlp
from .solvers.qp import solve_qp
from .solvers.sqp import solve_sqp
from .vehicle import FUEL_UNIT_COEFF, VehicleParams, derived_coeffs, resistance_accel

METHODS = ("QP", "SQP", "NLP")
GAP_TOLERANCE = 1e-3
LOG_COLUMNS = ("t", "s", "v", "u", "a_v", "a_b", "theta", "gap", "fuel_cum", "solve_ms")


@dataclass(frozen=True)
class EgoState:
    s: float
    v: float
    u: float = 0.0
    a_v: float = 0.0
    a_b: float = 0.0

    def __post_init__(self):
        if self.v < 0:
            raise ValueError(f"speed must be >= 0, got {self.v}")
        if self.u < 0 or self.a_b < 0:
            raise ValueError("traction and brake must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.s, self.v, self.u, self.a_v, self.a_b])


@dataclass(frozen=True)
class EpisodeConfig:
    vehicle: str
    method: str
    cycle: DrivingCycle
    road: SlopeProfile = FLAT
    horizon: float = 5.0
    dt: float = 0.1
    use_slope_prediction: bool = True
    d_init: float = D_INIT
    time_headway: float = TIME_HEADWAY
    params: VehicleParams | None = None
    fuel: FuelCoefficients | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    engine_map: object | None = None  # optional map-metering cross-check

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.params is None and self.vehicle not in VEHICLES:
            raise ValueError(f"unknown vehicle preset {self.vehicle!r}")
        if abs(self.cycle.timestep - self.dt) > 1e-12:
            raise ValueError(f"cycle timestep {self.cycle.timestep} does not match dt {self.dt}")
        n = self.horizon / self.dt
        if self.horizon <= 0 or abs(n - round(n)) > 1e-9:
            raise ValueError("horizon must be a positive multiple of dt")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def vehicle_params(self) -> VehicleParams:
        return self.params if self.params is not None else VEHICLES[self.vehicle]

    @property
    def fuel_coeffs(self) -> FuelCoefficients:
        return self.fuel if self.fuel is not None else FUELS[self.vehicle]

    @property
    def agent_id(self) -> str:
        return agent_name(self.vehicle, self.method, self.horizon, self.use_slope_prediction)

    def horizon_spec(self) -> HorizonSpec:
        w = METHOD_WEIGHTS[self.method]
        return HorizonSpec.from_vehicle(
            self.vehicle_params, self.n_steps, dt=self.dt, time_headway=self.time_headway,
            d_min=w.d_min, d_max=w.d_max, d_init=self.d_init, w1=w.w1, w2=w.w2, w3=w.w3,
            use_slope_prediction=self.use_slope_prediction,
        )


def agent_name(vehicle: str, method: str, horizon: float, use_slope_prediction: bool = True) -> str:
    h = f"{horizon:g}"
    return f"{vehicle.capitalize()}-{method}-{h}{'' if use_slope_prediction else 'F'}"


def leader_name(vehicle: str) -> str:
    return f"{vehicle.capitalize()}-L"


@dataclass(frozen=True)
class EpisodeMetrics:
    travel_time: float
    travel_distance: float
    fuel_consumption: float
    average_fuel_rate: float
    fuel_efficiency: float
    average_speed: float
    efficiency_improvement_vs_leading: float
    average_solve_time: float
    constraint_violation_count: int
    completed: bool

    def to_dict(self) -> dict:
        return asdict(self)


class MetricsError(ValueError):
    pass


def metrics_from_totals(travel_time, travel_distance, fuel_consumption, leader_efficiency=None,
                        average_solve_time=float("nan"), violations=0, completed=True) -> EpisodeMetrics:
    """Derive rates and efficiencies from summed raw quantities."""
    if not travel_distance > 0:
        raise MetricsError(f"travel distance must be > 0 to define efficiency, got {travel_distance}")
    if not travel_time > 0:
        raise MetricsError(f"travel time must be > 0, got {travel_time}")
    eff = fuel_consumption * 100.0 / travel_distance
    improvement = 0.0 if leader_efficiency is None else (leader_efficiency - eff) / leader_efficiency * 100.0
    return EpisodeMetrics(
        travel_time=float(travel_time),
        travel_distance=float(travel_distance),
        fuel_consumption=float(fuel_consumption),
        average_fuel_rate=float(fuel_consumption / travel_time),
        fuel_efficiency=float(eff),
        average_speed=float(travel_distance / travel_time),
        efficiency_improvement_vs_leading=float(improvement),
        average_solve_time=float(average_solve_time),
        constraint_violation_count=int(violations),
        completed=bool(completed),
    )


@dataclass
class EpisodeLog:
    """Per-step record of one episode.

    Row ``k`` holds the state at ``t_k`` together with the controls applied
    over ``[t_k, t_k + dt]``; ``fuel_cum`` is the total after that step.
    ``final_s``/``final_v`` close the last step.
    """

    agent_id: str
    dt: float
    time_headway: float
    d_min: float
    d_max: float
    columns: dict
    lead: dict
    final_s: float
    final_v: float
    final_gap: float
    completed: bool
    fail_step: int | None = None
    fail_reason: str = ""
    map_fuel: float | None = None
    lead_map_fuel: float | None = None

    @property
    def steps(self) -> int:
        return len(self.columns["t"])

    def gaps(self) -> np.ndarray:
        return np.append(self.columns["gap"], self.final_gap)

    def violation_count(self) -> int:
        g = self.gaps()
        return int(np.sum((g <= self.d_min - GAP_TOLERANCE) | (g >= self.d_max + GAP_TOLERANCE)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_COLUMNS)
            for row in zip(*(self.columns[c] for c in LOG_COLUMNS)):
                w.writerow([repr(float(x)) for x in row])


def _realize(a_v, v, a_r, params: VehicleParams, dt):
    """Traction and brake that produce ``a_v``; ``a_v`` is cut back when an
    actuator saturates or the vehicle would reverse."""
    if v + a_v * dt < 0:
        a_v = -v / dt
    u = min(max(a_v + a_r, 0.0), params.u_max)
    b = u - a_v - a_r
    if b < 0:  # traction saturated
        a_v, b = u - a_r, 0.0
    elif b > params.b_max:
        b = params.b_max
        a_v = u - a_r - b
    return u, a_v, b


def execute_control(x: EgoState, solution: HorizonSolution, method: str, theta_now: float, dt: float,
                    params: VehicleParams) -> EgoState:
    """Apply the first planned control for one step on the real road.

    QP plans carry ``A[0]``; traction and brake follow from the dynamics at
    the actual slope. SQP/NLP plans carry ``U[0]`` and ``B[0]``, so the
    realised acceleration absorbs any slope mismatch. The acceleration is then
    rate-limited by ``jerk_max`` and the state advanced one step.
    """
    coeffs = derived_coeffs(params)
    a_r = float(resistance_accel(x.v, theta_now, coeffs))
    if method == "QP":
        u, a_v, b = _realize(float(solution.A[0]), x.v, a_r, params, dt)
    else:
        u, b = float(solution.U[0]), float(solution.B[0])
        u = min(max(u, 0.0), params.u_max)
        b = min(max(b, 0.0), params.b_max)
        a_v = u - a_r - b
        if x.v + a_v * dt < 0:
            u, a_v, b = _realize(a_v, x.v, a_r, params, dt)
    step = params.jerk_max * dt
    if abs(a_v - x.a_v) > step:
        target = x.a_v + math.copysign(step, a_v - x.a_v)
        u, a_v, b = _realize(target, x.v, a_r, params, dt)
    v_next = x.v + a_v * dt
    if v_next < 0:  # rounding only; _realize keeps this >= 0
        v_next = 0.0
    s_next = x.s + x.v * dt + 0.5 * a_v * dt * dt
    return EgoState(s_next, v_next, u, a_v, b)


def meter_fuel(x_after: EgoState, fuel: FuelCoefficients, dt: float) -> float:
    """Fuel used over one step, floored at the idle rate."""
    idle = fuel.o0
    return max(float(fuel_rate_hat(x_after.v, x_after.u, fuel)), idle) * dt


def leader_traction(a_l, v_l, theta, coeffs) -> float:
    return max(float(a_l + resistance_accel(v_l, theta, coeffs)), 0.0)


def map_fuel_rate_best_gear(v, u, params: VehicleParams, engine_map) -> float:
    """Engine-map fuel rate at the cheapest admissible gear.

    Torque is clipped to the full-load curve; below idle in every gear the
    engine idles at zero load.
    """
    ratios = np.asarray(params.gear_ratios) * params.final_drive_ratio
    speed = v * ratios / params.wheel_radius
    torque = u * params.mass * params.wheel_radius / (ratios * params.transmission_efficiency)
    w_lo, w_hi = engine_map.speed_bounds
    ok = (speed >= w_lo) & (speed <= w_hi)
    if not ok.any():
        speed, torque, ok = np.array([w_lo]), np.array([0.0]), np.array([True])
    speed, torque = speed[ok], np.minimum(np.maximum(torque[ok], 0.0), engine_map.max_torque(speed[ok]))
    rate = engine_map.power(speed, torque) * engine_map.efficiency(speed, torque) / FUEL_UNIT_COEFF
    return float(np.min(rate))


def _shift(sol: HorizonSolution) -> HorizonSolution:
    arrays = {k: shifted_reference(v) for k, v in sol.arrays().items()}
    return HorizonSolution(**arrays, objective=float("nan"))


def run_episode(config: EpisodeConfig):
    """Run one closed-loop episode over the whole cycle.

    Returns ``(EpisodeMetrics, EpisodeLog)``. A solve that does not end
    optimal stops the episode; it is flagged incomplete with the step index
    and metrics cover the steps executed so far.
    """
    params = config.vehicle_params
    fuel = config.fuel_coeffs
    coeffs = derived_coeffs(params)
    spec = config.horizon_spec()
    cycle = config.cycle
    dt = config.dt
    n = spec.n_steps
    road = config.road
    th = config.time_headway
    method = config.method

    lead_s = cycle.distance + config.d_init
    lead_v = cycle.speed
    lead_a = cycle.accel
    x = EgoState(0.0, float(lead_v[0]))
    gap0 = float(headway_gap(lead_s[0], x.s, x.v, th))
    if not spec.d_min < gap0 < spec.d_max:
        raise ValueError(f"initial gap {gap0:.3f} m outside ({spec.d_min}, {spec.d_max})")

    qp_solver = ADMMSolver(config.solver)
    nlp_solver = NLPSolver(config.solver)
    n_total = len(lead_v) - 1
    cols = {c: np.zeros(n_total) for c in LOG_COLUMNS}
    lead_cols = {c: np.zeros(n_total) for c in ("s", "v", "u", "theta", "fuel_cum")}
    fuel_cum = lead_fuel = 0.0
    map_fuel = lead_map_fuel = 0.0 if config.engine_map is not None else None
    prev = None
    completed, fail_step, fail_reason = True, None, ""
    k = 0
    for k in range(n_total):
        s_l, v_l, _ = predict_leading(LeadState(float(lead_s[k]), float(lead_v[k]), float(lead_a[k])), n, dt)
        theta_now = float(slope_at(x.s, road))
        if method == "QP":
            problem = build_qp(x.as_array(), s_l, v_l, spec)
            sol, diag = solve_qp(problem, warm_start=None if prev is None else _shift(prev), solver=qp_solver)
        else:
            s_ref = s_l - config.d_init if prev is None else shifted_reference(prev.S)
            if spec.use_slope_prediction:
                grade = predict_slope_sequence(s_ref, road, True)
            else:
                grade = np.full(n + 1, theta_now)
            problem = build_nlp(x.as_array(), s_l, v_l, grade, coeffs, fuel, spec)
            if method == "NLP":
                sol, diag = solve_nlp(problem, warm_start=None if prev is None else _shift(prev), solver=nlp_solver)
            else:
                ref = None if prev is None else (shifted_reference(prev.V), shifted_reference(prev.U))
                sol, diag = solve_sqp(problem, ref, config.solver, solver=qp_solver,
                                      warm_start=None if prev is None else _shift(prev))
        solve_ms = diag.wall_time
        if not diag.ok:
            completed, fail_step = False, k
            fail_reason = f"{diag.status}: {diag.message}"
            break

        x_next = execute_control(x, sol, method, theta_now, dt, params)
        fuel_cum += meter_fuel(x_next, fuel, dt)
        u_l = leader_traction(lead_a[k], lead_v[k], slope_at(lead_s[k], road), coeffs)
        lead_fuel += meter_fuel(EgoState(float(lead_s[k + 1]), float(lead_v[k + 1]), u_l), fuel, dt)
        if map_fuel is not None:
            map_fuel += map_fuel_rate_best_gear(x_next.v, x_next.u, params, config.engine_map) * dt
            lead_map_fuel += map_fuel_rate_best_gear(float(lead_v[k + 1]), u_l, params, config.engine_map) * dt

        for name, value in (("t", k * dt), ("s", x.s), ("v", x.v), ("u", x_next.u), ("a_v", x_next.a_v),
                            ("a_b", x_next.a_b), ("theta", theta_now),
                            ("gap", headway_gap(lead_s[k], x.s, x.v, th)), ("fuel_cum", fuel_cum),
                            ("solve_ms", solve_ms)):
            cols[name][k] = value
        lead_cols["s"][k], lead_cols["v"][k], lead_cols["u"][k] = lead_s[k], lead_v[k], u_l
        lead_cols["theta"][k], lead_cols["fuel_cum"][k] = slope_at(lead_s[k], road), lead_fuel
        x, prev = x_next, sol
    else:
        k = n_total
    steps = k
    cols = {c: v[:steps] for c, v in cols.items()}
    lead_cols = {c: v[:steps] for c, v in lead_cols.items()}
    log = EpisodeLog(
        agent_id=config.agent_id, dt=dt, time_headway=th, d_min=spec.d_min, d_max=spec.d_max,
        columns=cols, lead=lead_cols, final_s=x.s, final_v=x.v,
        final_gap=float(headway_gap(lead_s[steps], x.s, x.v, th)), completed=completed,
        fail_step=fail_step, fail_reason=fail_reason, map_fuel=map_fuel, lead_map_fuel=lead_map_fuel,
    )
    log.lead["final_s"] = float(lead_s[steps])
    return compute_metrics(log), log


def leader_metrics(log: EpisodeLog) -> EpisodeMetrics:
    t = log.steps * log.dt
    d = log.lead["final_s"] - (log.lead["s"][0] if log.steps else log.lead["final_s"])
    f = float(log.lead["fuel_cum"][-1]) if log.steps else 0.0
    return metrics_from_totals(t, d, f)


def compute_metrics(log: EpisodeLog) -> EpisodeMetrics:
    """Episode metrics recomputed from the raw log columns."""
    if log.steps == 0:
        raise MetricsError("empty log: no step was executed")
    c = log.columns
    lead = leader_metrics(log)
    return metrics_from_totals(
        log.steps * log.dt,
        log.final_s - float(c["s"][0]),
        float(c["fuel_cum"][-1]),
        leader_efficiency=lead.fuel_efficiency,
        average_solve_time=float(np.mean(c["solve_ms"])),
        violations=log.violation_count(),
        completed=log.completed,
    )


def write_metrics_json(metrics: EpisodeMetrics, path, extra: dict | None = None) -> None:
    payload = metrics.to_dict()
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def with_method(config: EpisodeConfig, method: str) -> EpisodeConfig:
    return replace(config, method=method)
