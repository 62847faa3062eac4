"""Engine torque-limit curve and brake-specific fuel consumption map."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator


@dataclass(frozen=True, eq=False)
class EngineMap:
    """Rectangular (speed x torque) efficiency grid plus a full-load curve.

    ``efficiency_grid[k, j]`` is the consumption in g/kWh at
    ``torque_grid[k]`` and ``speed_grid[j]``, the same layout as the CSV file.
    """

    speed_grid: np.ndarray
    torque_grid: np.ndarray
    max_torque_curve: np.ndarray
    efficiency_grid: np.ndarray
    speed_bounds: tuple[float, float] = (62.0, 630.0)
    torque_bounds: tuple[float, float] = (0.0, 724.0)

    def __post_init__(self):
        for name in ("speed_grid", "torque_grid", "max_torque_curve", "efficiency_grid"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        w, t = self.speed_grid, self.torque_grid
        if w.ndim != 1 or t.ndim != 1 or len(w) < 2 or len(t) < 2:
            raise ValueError("speed and torque grids need at least two points each")
        if np.any(np.diff(w) <= 0) or np.any(np.diff(t) <= 0):
            raise ValueError("speed and torque grids must be strictly increasing")
        if self.max_torque_curve.shape != w.shape:
            raise ValueError("max_torque_curve must have one value per speed grid point")
        if self.efficiency_grid.shape != (len(t), len(w)):
            raise ValueError(
                f"efficiency grid shape {self.efficiency_grid.shape} != (torques, speeds) {(len(t), len(w))}"
            )
        if not np.all(self.efficiency_grid > 0):
            raise ValueError("efficiency values must be > 0")
        lo, hi = self.speed_bounds
        if lo < w[0] or hi > w[-1] or lo >= hi:
            raise ValueError(f"speed bounds {self.speed_bounds} outside grid [{w[0]}, {w[-1]}]")
        tlo, thi = self.torque_bounds
        if tlo < t[0] or thi > t[-1] or tlo >= thi:
            raise ValueError(f"torque bounds {self.torque_bounds} outside grid [{t[0]}, {t[-1]}]")
        eff = RegularGridInterpolator((t, w), self.efficiency_grid, method="linear")
        pw = RegularGridInterpolator((t, w), np.outer(t, w), method="linear")
        object.__setattr__(self, "_eff", eff)
        object.__setattr__(self, "_pow", pw)

    def max_torque(self, speed):
        return np.interp(speed, self.speed_grid, self.max_torque_curve)

    def check_bounds(self, speed: float, torque: float) -> str | None:
        """Name of the first violated bound, or ``None`` inside the envelope."""
        lo, hi = self.speed_bounds
        if speed < lo:
            return f"engine speed {speed:.3f} rad/s below minimum {lo}"
        if speed > hi:
            return f"engine speed {speed:.3f} rad/s above maximum {hi}"
        if torque < self.torque_bounds[0]:
            return f"engine torque {torque:.3f} N*m below minimum {self.torque_bounds[0]}"
        limit = min(float(self.max_torque(speed)), self.torque_bounds[1])
        if torque > limit:
            return f"engine torque {torque:.3f} N*m above full-load limit {limit:.3f}"
        return None

    def feasible_mask(self, speed, torque):
        speed = np.asarray(speed, dtype=float)
        torque = np.asarray(torque, dtype=float)
        limit = np.minimum(self.max_torque(speed), self.torque_bounds[1])
        return (
            (speed >= self.speed_bounds[0])
            & (speed <= self.speed_bounds[1])
            & (torque >= self.torque_bounds[0])
            & (torque <= limit)
        )

    def _points(self, speed, torque):
        speed = np.asarray(speed, dtype=float)
        torque = np.minimum(np.asarray(torque, dtype=float), self.max_torque(speed))
        speed, torque = np.broadcast_arrays(speed, torque)
        pts = np.stack([torque.ravel(), speed.ravel()], axis=-1)
        return pts, speed.shape

    def efficiency(self, speed, torque):
        pts, shape = self._points(speed, torque)
        out = self._eff(pts).reshape(shape)
        return out if shape else float(out)

    def power(self, speed, torque):
        pts, shape = self._points(speed, torque)
        out = self._pow(pts).reshape(shape)
        return out if shape else float(out)

    def to_csv(self, map_path, torque_path) -> None:
        with open(map_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["omega_rad_s", *[repr(float(x)) for x in self.speed_grid]])
            for tq, row in zip(self.torque_grid, self.efficiency_grid):
                w.writerow([repr(float(tq)), *[repr(float(x)) for x in row]])
        with open(torque_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["omega_rad_s", "max_torque_nm"])
            for sp, tq in zip(self.speed_grid, self.max_torque_curve):
                w.writerow([repr(float(sp)), repr(float(tq))])


def load_engine_map(map_path, torque_path, speed_bounds=None, torque_bounds=None) -> EngineMap:
    """Read an efficiency grid CSV and its full-load curve CSV.

    Bounds default to the grid extent when not given.
    """
    map_path, torque_path = Path(map_path), Path(torque_path)
    with open(map_path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0][0].strip() != "omega_rad_s":
        raise ValueError(f"{map_path}: first header cell must be 'omega_rad_s'")
    try:
        speeds = [float(x) for x in rows[0][1:]]
        torques, grid = [], []
        for r in rows[1:]:
            if len(r) != len(speeds) + 1:
                raise ValueError(f"row for torque {r[0]} has {len(r) - 1} values, expected {len(speeds)}")
            torques.append(float(r[0]))
            grid.append([float(x) for x in r[1:]])
    except ValueError as exc:
        raise ValueError(f"{map_path}: {exc}") from exc

    with open(torque_path, newline="") as fh:
        trows = [r for r in csv.reader(fh) if r]
    if not trows or [c.strip() for c in trows[0]] != ["omega_rad_s", "max_torque_nm"]:
        raise ValueError(f"{torque_path}: header must be 'omega_rad_s,max_torque_nm'")
    curve_w = np.array([float(r[0]) for r in trows[1:]])
    curve_t = np.array([float(r[1]) for r in trows[1:]])
    speeds = np.array(speeds)
    max_curve = np.interp(speeds, curve_w, curve_t)
    if speed_bounds is None:
        speed_bounds = (float(speeds[0]), float(speeds[-1]))
    if torque_bounds is None:
        torque_bounds = (float(torques[0]), float(torques[-1]))
    return EngineMap(speeds, np.array(torques), max_curve, np.array(grid), tuple(speed_bounds), tuple(torque_bounds))


def synthetic_truck_map(n_speed: int = 58, n_torque: int = 38) -> EngineMap:
    """Smooth stand-in for a heavy-duty diesel map.

    Full load rises from idle to a 724 N*m plateau and falls off above
    ~350 rad/s. Consumption is a bowl with its sweet spot near 190 g/kWh at
    mid speed and ~75% load, climbing steeply at light load.
    """
    speeds = np.linspace(62.0, 630.0, n_speed)
    torques = np.linspace(0.0, 724.0, n_torque)
    max_curve = np.interp(speeds, [62.0, 150.0, 350.0, 630.0], [480.0, 724.0, 724.0, 420.0])
    w, t = np.meshgrid(speeds, torques)
    load = t / 724.0
    bsfc = (
        190.0
        + 55.0 * ((w - 230.0) / 400.0) ** 2
        + 40.0 * (load - 0.75) ** 2
        + 22.0 / (load + 0.12)
        - 22.0 / 0.87
    )
    return EngineMap(speeds, torques, max_curve, bsfc, (62.0, 630.0), (0.0, 724.0))
