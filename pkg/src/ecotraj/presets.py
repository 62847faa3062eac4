"""Built-in sedan and truck presets and per-method optimisation weights."""

from __future__ import annotations

from dataclasses import dataclass

from .fuel_model import FuelCoefficients
from .vehicle import VehicleParams


def geometric_ladder(first: float, last: float, n: int) -> tuple[float, ...]:
    step = (last / first) ** (1.0 / (n - 1))
    return tuple(first * step**i for i in range(n))


SEDAN = VehicleParams(
    mass=1200.0,
    frontal_area=2.5,
    air_density=1.184,
    drag_coeff=0.32,
    rolling_coeff=0.015,
    gravity=9.81,
    wheel_radius=0.3,
    final_drive_ratio=4.0,
    transmission_efficiency=0.92,
    gear_ratios=geometric_ladder(3.5, 0.8, 5),
    v_max=30.0,
    a_v_max=2.0,
    b_max=5.0,
    u_max=9.0,
    jerk_max=1.0,
)

TRUCK = VehicleParams(
    mass=4800.0,
    frontal_area=2.5,
    air_density=1.184,
    drag_coeff=0.6,
    rolling_coeff=0.006,
    gravity=9.81,
    wheel_radius=0.5,
    final_drive_ratio=4.0,
    transmission_efficiency=0.92,
    gear_ratios=geometric_ladder(5.0, 0.75, 7),
    v_max=27.0,
    a_v_max=2.0,
    b_max=5.0,
    u_max=3.0,
    jerk_max=1.0,
)

SEDAN_FUEL = FuelCoefficients(
    o0=1.4627e-1, o1=1.0254e-2, o2=-9.2812e-4, o3=2.154e-5, o4=-4.2427e-7,
    c0=0.07224, c1=0.09681, c2=1.0750e-3,
)

TRUCK_FUEL = FuelCoefficients(
    o0=3.351e-1, o1=9.0901e-3, o2=3.7574e-8, o3=3.4935e-8, o4=2.4230e-4,
    c0=1.6550e-1, c1=3.6070e-1, c2=2.4223e-4,
)

VEHICLES = {"sedan": SEDAN, "truck": TRUCK}
FUELS = {"sedan": SEDAN_FUEL, "truck": TRUCK_FUEL}


@dataclass(frozen=True)
class MethodWeights:
    w1: float
    w2: float
    w3: float
    d_min: float
    d_max: float


METHOD_WEIGHTS = {
    "QP": MethodWeights(w1=0.1, w2=2.0, w3=0.0, d_min=10.0, d_max=100.0),
    "SQP": MethodWeights(w1=0.1, w2=5.0, w3=2.0, d_min=10.0, d_max=200.0),
    "NLP": MethodWeights(w1=0.1, w2=5.0, w3=10.0, d_min=10.0, d_max=100.0),
}

D_INIT = 50.0
TIME_HEADWAY = 1.5
