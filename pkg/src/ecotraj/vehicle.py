"""Longitudinal vehicle physics: resistance, traction and engine operating point."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class VehicleParams:
    """Physical constants and actuator bounds of one vehicle.

    Brake acceleration is a non-negative magnitude, so the traction and brake
    bounds are ``[0, u_max]`` and ``[0, b_max]``.
    """

    mass: float
    frontal_area: float
    air_density: float
    drag_coeff: float
    rolling_coeff: float
    gravity: float = 9.81
    wheel_radius: float = 0.5
    final_drive_ratio: float = 4.0
    transmission_efficiency: float = 0.92
    gear_ratios: tuple[float, ...] = (1.0,)
    v_max: float = 30.0
    a_v_max: float = 2.0
    b_max: float = 5.0
    u_max: float = 3.0
    jerk_max: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "gear_ratios", tuple(float(g) for g in self.gear_ratios))
        positive = {
            "mass": self.mass,
            "frontal_area": self.frontal_area,
            "air_density": self.air_density,
            "wheel_radius": self.wheel_radius,
            "final_drive_ratio": self.final_drive_ratio,
            "transmission_efficiency": self.transmission_efficiency,
            "v_max": self.v_max,
            "a_v_max": self.a_v_max,
            "b_max": self.b_max,
            "u_max": self.u_max,
            "jerk_max": self.jerk_max,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be > 0, got {value}")
        if self.drag_coeff < 0 or self.rolling_coeff < 0:
            raise ValueError("drag_coeff and rolling_coeff must be >= 0")
        if not self.gear_ratios or any(g <= 0 for g in self.gear_ratios):
            raise ValueError("gear ratios must be a non-empty list of positive values")

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["gear_ratios"] = list(self.gear_ratios)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VehicleParams":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown vehicle parameter(s): {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class DerivedCoeffs:
    k1: float
    k2: float
    k3: float


def derived_coeffs(params: VehicleParams) -> DerivedCoeffs:
    k1 = params.drag_coeff * params.air_density * params.frontal_area / (2 * params.mass)
    return DerivedCoeffs(k1=k1, k2=params.rolling_coeff * params.gravity, k3=params.gravity)


def resistance_accel(v, theta, coeffs: DerivedCoeffs):
    """Deceleration from aero drag, rolling resistance and grade (m/s^2).

    Works element-wise on arrays.
    """
    return coeffs.k1 * np.square(v) + coeffs.k2 * np.cos(theta) + coeffs.k3 * np.sin(theta)


def traction_accel(a_v, a_r, a_b):
    return a_v + a_r + a_b


@dataclass(frozen=True)
class EngineState:
    engine_speed: float
    engine_torque: float
    gear_index: int
    power: float = 0.0
    efficiency: float = float("nan")
    feasible: bool = False
    violation: str | None = field(default=None, compare=False)


def engine_state(v: float, u: float, gear_index: int, params: VehicleParams, engine_map=None) -> EngineState:
    """Engine speed/torque for vehicle speed ``v`` and traction ``u`` in a gear.

    ``gear_index`` is 1-based. Feasibility is judged against ``engine_map``
    when one is given; without a map the state is never marked feasible.
    Leaving the map envelope is reported through ``feasible``/``violation``
    rather than raised, since gear enumeration expects many such points.
    """
    if v < 0:
        raise ValueError(f"speed must be >= 0, got {v}")
    if not 1 <= gear_index <= len(params.gear_ratios):
        raise ValueError(f"gear_index {gear_index} outside 1..{len(params.gear_ratios)}")
    traction_force = u * params.mass
    wheel_torque = traction_force * params.wheel_radius
    total_ratio = params.gear_ratios[gear_index - 1] * params.final_drive_ratio
    torque = wheel_torque / (total_ratio * params.transmission_efficiency)
    speed = v * total_ratio / params.wheel_radius
    power = speed * torque
    if engine_map is None:
        return EngineState(speed, torque, gear_index, power, feasible=False, violation="no engine map")
    violation = engine_map.check_bounds(speed, torque)
    if violation is not None:
        return EngineState(speed, torque, gear_index, power, feasible=False, violation=violation)
    return EngineState(speed, torque, gear_index, power, engine_map.efficiency(speed, torque), True)


# W * g/kWh / (1000 * 3600) -> g/s, / density -> ml/s
DIESEL_DENSITY = 0.85
FUEL_UNIT_COEFF = DIESEL_DENSITY * 1000 * 3600


def fuel_rate_from_power(power_w, efficiency_g_kwh):
    """Fuel rate in ml/s from engine power (W) and specific consumption (g/kWh)."""
    return np.asarray(power_w) * np.asarray(efficiency_g_kwh) / FUEL_UNIT_COEFF


def map_fuel_rate(state: EngineState, engine_map) -> float:
    """Fuel rate (ml/s) at an engine operating point read off the map.

    Zero engine speed is treated as idling at the lower speed bound with no
    load. Any other point outside the map envelope raises ``ValueError``.
    """
    speed, torque = state.engine_speed, state.engine_torque
    if speed == 0.0:
        speed, torque = engine_map.speed_bounds[0], 0.0
    violation = engine_map.check_bounds(speed, torque)
    if violation is not None:
        raise ValueError(f"operating point outside engine map: {violation}")
    power = engine_map.power(speed, torque)
    eff = engine_map.efficiency(speed, torque)
    return float(power * eff / FUEL_UNIT_COEFF)
