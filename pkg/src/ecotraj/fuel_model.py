"""Gear optimisation over an engine map and the bivariate polynomial fuel model.

The model is ``f(v, u) = o0 + o1 v + o2 v^2 + o3 v^3 + o4 v^4 + (c0 + c1 v + c2 v^2) u``
with ``v`` in m/s, traction acceleration ``u`` in m/s^2 and ``f`` in ml/s.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .vehicle import FUEL_UNIT_COEFF, VehicleParams, derived_coeffs, resistance_accel

COEFF_NAMES = ("o0", "o1", "o2", "o3", "o4", "c0", "c1", "c2")


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class FuelCoefficients:
    o0: float
    o1: float
    o2: float
    o3: float
    o4: float
    c0: float
    c1: float
    c2: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError("fuel coefficients must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in COEFF_NAMES], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "FuelCoefficients":
        return cls(*(float(x) for x in arr))

    def to_json(self, path, provenance: dict | None = None) -> None:
        doc = {n: getattr(self, n) for n in COEFF_NAMES}
        doc["provenance"] = provenance or {}
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=False) + "\n")

    @classmethod
    def from_json(cls, path) -> "FuelCoefficients":
        doc = json.loads(Path(path).read_text())
        missing = [n for n in COEFF_NAMES if n not in doc]
        if missing:
            raise ValueError(f"{path}: missing coefficient(s) {missing}")
        return cls(*(float(doc[n]) for n in COEFF_NAMES))


def fuel_rate_hat(v, u, coeffs: FuelCoefficients):
    o0, o1, o2, o3, o4, c0, c1, c2 = coeffs.as_array()
    return o0 + v * (o1 + v * (o2 + v * (o3 + v * o4))) + (c0 + v * (c1 + v * c2)) * u


def fuel_rate_hat_derivatives(v, u, coeffs: FuelCoefficients):
    """Closed-form ``(f_v, f_u, f_vv, f_uu, f_vu)``; ``f_uu`` is identically zero."""
    o0, o1, o2, o3, o4, c0, c1, c2 = coeffs.as_array()
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    f_v = o1 + v * (2 * o2 + v * (3 * o3 + v * 4 * o4)) + (c1 + 2 * c2 * v) * u
    f_u = c0 + v * (c1 + v * c2) + 0.0 * u
    f_vv = 2 * o2 + v * (6 * o3 + 12 * o4 * v) + 2 * c2 * u
    f_uu = np.zeros(np.broadcast(v, u).shape)
    f_vu = c1 + 2 * c2 * v + 0.0 * u
    return f_v, f_u, f_vv, f_uu, f_vu


@dataclass(frozen=True)
class GearOptSample:
    v: float
    u: float
    opt_fuel_rate: float
    opt_gear: int


@dataclass(frozen=True)
class FitReport:
    sample_count: int
    mean_abs_error: float
    rms_error: float
    restricted_mean_abs_error: float
    restricted_count: int = 0
    max_abs_error: float = field(default=float("nan"))

    def to_dict(self) -> dict:
        return asdict(self)


def default_v_range() -> np.ndarray:
    return np.round(np.arange(1, 61) * 0.5, 10)


def default_a_range() -> np.ndarray:
    return np.round(np.arange(-10, 21) * 0.1, 10)


def optimize_gears(engine_map, params: VehicleParams, v_range=None, a_range=None) -> list[GearOptSample]:
    """Minimum-fuel feasible gear for every (v, a) pair on a flat road.

    Traction is ``u = a + a_R(v, 0)`` with no braking. Pairs where no gear
    keeps the engine inside its envelope, or where ``u <= 0`` (no positive
    power, so no meaningful traction sample), are skipped. Ties go to the
    lowest gear. Raises ``FitError`` if nothing is feasible.
    """
    v_range = default_v_range() if v_range is None else np.asarray(v_range, dtype=float)
    a_range = default_a_range() if a_range is None else np.asarray(a_range, dtype=float)
    if v_range.size == 0 or a_range.size == 0:
        raise ValueError("sampling grids must be non-empty")
    coeffs = derived_coeffs(params)
    ratios = np.asarray(params.gear_ratios) * params.final_drive_ratio

    vv, aa = np.meshgrid(v_range, a_range, indexing="ij")
    uu = aa + resistance_accel(vv, 0.0, coeffs)
    wheel_torque = uu * params.mass * params.wheel_radius
    # axis 0: gear
    speed = vv[None] * ratios[:, None, None] / params.wheel_radius
    torque = wheel_torque[None] / (ratios[:, None, None] * params.transmission_efficiency)
    ok = engine_map.feasible_mask(speed, torque) & (uu[None] > 0)
    fuel = np.full(speed.shape, np.inf)
    if ok.any():
        eff = engine_map.efficiency(speed[ok], torque[ok])
        power = engine_map.power(speed[ok], torque[ok])
        fuel[ok] = power * eff / FUEL_UNIT_COEFF
    best = np.argmin(fuel, axis=0)
    best_fuel = np.take_along_axis(fuel, best[None], axis=0)[0]

    samples = []
    for i in range(len(v_range)):
        for j in range(len(a_range)):
            if np.isfinite(best_fuel[i, j]) and best_fuel[i, j] > 0:
                samples.append(GearOptSample(float(vv[i, j]), float(uu[i, j]), float(best_fuel[i, j]), int(best[i, j]) + 1))
    if not samples:
        raise FitError("no (v, a) pair has a feasible gear on this engine map")
    return samples


def design_matrix(v, u) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    u = np.asarray(u, dtype=float)
    return np.column_stack([np.ones_like(v), v, v**2, v**3, v**4, u, v * u, v**2 * u])


def fit_fuel_model(samples) -> tuple[FuelCoefficients, FitReport]:
    """Linear least-squares fit of the eight model coefficients.

    Samples with ``u <= 0`` are dropped first. Columns are normalised and the
    system is solved through an SVD; a numerically rank-deficient design
    raises ``FitError`` listing the unidentifiable coefficient combinations.
    """
    samples = [s for s in samples if s.u > 0]
    if len(samples) < len(COEFF_NAMES):
        raise FitError(f"need at least {len(COEFF_NAMES)} samples with u > 0, got {len(samples)}")
    v = np.array([s.v for s in samples])
    u = np.array([s.u for s in samples])
    f = np.array([s.opt_fuel_rate for s in samples])
    X = design_matrix(v, u)
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    Xs = X / scale
    U_, sv, Vt = np.linalg.svd(Xs, full_matrices=False)
    tol = sv[0] * max(Xs.shape) * np.finfo(float).eps * 1e3
    deficient = sv <= tol
    if np.any(deficient):
        directions = []
        for row in Vt[deficient]:
            big = np.argsort(-np.abs(row))[:3]
            directions.append(" + ".join(f"{row[k]:.3g}*{COEFF_NAMES[k]}" for k in big if abs(row[k]) > 1e-3))
        raise FitError(
            f"design matrix is rank deficient (rank {int((~deficient).sum())} of {len(COEFF_NAMES)}); "
            f"unidentifiable directions: {'; '.join(directions)}"
        )
    theta_s = Vt.T @ ((U_.T @ f) / sv)
    theta = theta_s / scale
    coeffs = FuelCoefficients.from_array(theta)
    return coeffs, fit_report(coeffs, v, u, f)


def fit_report(coeffs: FuelCoefficients, v, u, f) -> FitReport:
    resid = fuel_rate_hat(v, u, coeffs) - f
    mask = (v > 5) & (v < 25) & (u > 0.1) & (u < 1.0)
    restricted = float(np.mean(np.abs(resid[mask]))) if mask.any() else float("nan")
    return FitReport(
        sample_count=int(len(f)),
        mean_abs_error=float(np.mean(np.abs(resid))),
        rms_error=float(np.sqrt(np.mean(resid**2))),
        restricted_mean_abs_error=restricted,
        restricted_count=int(mask.sum()),
        max_abs_error=float(np.max(np.abs(resid))),
    )
