"""Road grade profiles, driving cycles for the leading vehicle, and horizon predictions."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class SlopeProfile:
    """Grade ``theta(s) = theta0 + sum_i a_i sin(2 pi s / l_i)`` in radians."""

    theta0: float = 0.0
    amplitudes: tuple[float, ...] = ()
    wavelengths: tuple[float, ...] = ()
    h0: float = 0.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))
        object.__setattr__(self, "wavelengths", tuple(float(w) for w in self.wavelengths))
        if len(self.amplitudes) != len(self.wavelengths):
            raise ValueError("amplitudes and wavelengths must have the same length")
        if any(w <= 0 for w in self.wavelengths):
            raise ValueError("wavelengths must be > 0")
        if abs(self.theta0) + sum(abs(a) for a in self.amplitudes) >= math.pi / 2:
            raise ValueError("profile can reach +-pi/2; tan(theta) undefined")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "theta0": self.theta0,
            "amplitudes": list(self.amplitudes),
            "wavelengths": list(self.wavelengths),
            "h0": self.h0,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SlopeProfile":
        unknown = set(d) - {"theta0", "amplitudes", "wavelengths", "h0", "name"}
        if unknown:
            raise ValueError(f"unknown road key(s): {sorted(unknown)}")
        return cls(
            theta0=float(d.get("theta0", 0.0)),
            amplitudes=tuple(d.get("amplitudes", ())),
            wavelengths=tuple(d.get("wavelengths", ())),
            h0=float(d.get("h0", 0.0)),
            name=str(d.get("name", "")),
        )


FLAT = SlopeProfile(name="flat")
ROLLING = SlopeProfile(0.0, (0.04, 0.02), (2870.0, 2136.0), name="rolling")
STEEP = SlopeProfile(0.02, (0.05, 0.02, 0.01), (2380.0, 1860.0, 1430.0), name="steep")
ROADS = {"flat": FLAT, "rolling": ROLLING, "steep": STEEP}


def slope_at(s, profile: SlopeProfile):
    s = np.asarray(s, dtype=float)
    theta = np.full(s.shape, profile.theta0)
    for a, lw in zip(profile.amplitudes, profile.wavelengths):
        theta = theta + a * np.sin(2.0 * np.pi * s / lw)
    return theta if theta.shape else float(theta)


def elevation_at(s, profile: SlopeProfile, origin: float = 0.0, step: float = 1.0):
    """Elevation by trapezoidal integration of ``tan(theta)`` from ``origin``.

    Accepts a scalar or an array of positions; each is integrated with a
    uniform grid of spacing at most ``step`` metres.
    """
    scalar = np.ndim(s) == 0
    pos = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(pos < origin):
        raise ValueError("positions must be >= the integration origin")
    top = float(pos.max()) if pos.size else origin
    n = max(1, int(math.ceil((top - origin) / step)))
    grid = np.linspace(origin, origin + n * step, n + 1)
    integrand = np.tan(slope_at(grid, profile))
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * step)])
    # exact tail piece for positions between grid nodes
    idx = np.minimum(((pos - origin) // step).astype(int), n - 1)
    rem = pos - grid[idx]
    tail = 0.5 * (integrand[idx] + np.tan(slope_at(pos, profile))) * rem
    h = profile.h0 + cum[idx] + tail
    return float(h[0]) if scalar else h


@dataclass(frozen=True, eq=False)
class DrivingCycle:
    """Leading-vehicle speed trace on a uniform time grid.

    ``distance`` is the cumulative trapezoid of ``speed``; ``accel[i]`` is the
    forward difference ``(speed[i+1] - speed[i]) / dt`` with the last entry 0.
    """

    name: str
    timestep: float
    speed: np.ndarray
    distance: np.ndarray = field(init=False)
    accel: np.ndarray = field(init=False)

    def __post_init__(self):
        speed = np.array(self.speed, dtype=float)
        if speed.ndim != 1 or speed.size < 2:
            raise ValueError("cycle needs at least two speed samples")
        if np.any(speed < 0):
            raise ValueError(f"cycle {self.name!r} has negative speed at index {int(np.argmax(speed < 0))}")
        if not self.timestep > 0:
            raise ValueError("timestep must be > 0")
        dt = self.timestep
        dist = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * dt)])
        acc = np.concatenate([np.diff(speed) / dt, [0.0]])
        for name, arr in (("speed", speed), ("distance", dist), ("accel", acc)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def duration(self) -> float:
        return self.timestep * (len(self.speed) - 1)

    def repeated(self, count: int) -> "DrivingCycle":
        if count < 1:
            raise ValueError("repeat count must be >= 1")
        if count == 1:
            return self
        parts = [self.speed] + [self.speed[1:]] * (count - 1)
        return DrivingCycle(f"{self.name}x{count}", self.timestep, np.concatenate(parts))


def resample(time, speed, dt: float) -> np.ndarray:
    t_new = np.arange(0.0, time[-1] - time[0] + 1e-9, dt)
    return np.interp(t_new + time[0], time, speed)


def load_driving_cycle(path, dt: float = 0.1, name: str | None = None) -> DrivingCycle:
    """Read a ``time_s,speed_m_s`` CSV and resample it linearly to ``dt``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"driving cycle file not found: {path}")
    time, speed = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["time_s", "speed_m_s"]:
            raise ValueError(f"{path}: header must be 'time_s,speed_m_s'")
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                t, v = float(row[0]), float(row[1])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from exc
            if v < 0:
                raise ValueError(f"{path}:{lineno}: negative speed {v}")
            time.append(t)
            speed.append(v)
    if len(time) < 2:
        raise ValueError(f"{path}: need at least two samples")
    time = np.array(time)
    if np.any(np.diff(time) <= 0):
        bad = int(np.argmax(np.diff(time) <= 0)) + 3
        raise ValueError(f"{path}:{bad}: time column is not strictly increasing")
    return DrivingCycle(name or path.stem, dt, resample(time, np.array(speed), dt))


def save_driving_cycle(cycle: DrivingCycle, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "speed_m_s"])
        for i, v in enumerate(cycle.speed):
            w.writerow([f"{i * cycle.timestep:.6g}", f"{v:.6f}"])


@dataclass(frozen=True)
class LeadState:
    s: float
    v: float
    a: float

    def __post_init__(self):
        if self.v < 0:
            raise ValueError("leading speed must be >= 0")


def predict_leading(x_l: LeadState, n_steps: int, dt: float):
    """Constant-acceleration rollout of the leader with speed clamped at zero.

    Returns ``(S_l, V_l, A_l)`` arrays of length ``n_steps + 1``; element 0 is
    the current state and the distance advances by the speed trapezoid.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    s = np.empty(n_steps + 1)
    v = np.empty(n_steps + 1)
    a = np.empty(n_steps + 1)
    s[0], v[0], a[0] = x_l.s, x_l.v, x_l.a
    for i in range(n_steps):
        v[i + 1] = max(0.0, v[i] + x_l.a * dt)
        a[i + 1] = x_l.a if v[i + 1] > 0 else 0.0
        s[i + 1] = s[i] + 0.5 * (v[i] + v[i + 1]) * dt
    return s, v, a


def predict_slope_sequence(s_ref, profile: SlopeProfile, use_prediction: bool = True):
    """Grade along a reference distance array.

    Without prediction the whole horizon sees the grade at ``s_ref[0]``.
    """
    s_ref = np.asarray(s_ref, dtype=float)
    if not use_prediction:
        return np.full(s_ref.shape, slope_at(s_ref[0], profile))
    return slope_at(s_ref, profile)


def shifted_reference(s_prev) -> np.ndarray:
    """Previous plan shifted one step, last element repeated."""
    s_prev = np.asarray(s_prev, dtype=float)
    return np.concatenate([s_prev[1:], s_prev[-1:]])


# (hold seconds, target speed m/s, ramp seconds) segments for the bundled cycles
_SYNTHETIC_SEGMENTS = {
    "highway": [
        (5, 0.0, 0), (0, 12.0, 22), (20, 12.0, 0), (0, 22.0, 25), (40, 22.0, 0), (0, 18.0, 15),
        (30, 18.0, 0), (0, 25.0, 20), (35, 25.0, 0), (0, 20.0, 15), (20, 20.0, 0), (0, 0.0, 35), (5, 0.0, 0),
    ],
    "urban": [
        (5, 0.0, 0), (0, 10.0, 17), (15, 10.0, 0), (0, 0.0, 16), (12, 0.0, 0), (0, 13.0, 22), (20, 13.0, 0),
        (0, 7.0, 12), (10, 7.0, 0), (0, 0.0, 14), (10, 0.0, 0), (0, 8.0, 14), (12, 8.0, 0), (0, 12.0, 12),
        (15, 12.0, 0), (0, 0.0, 20), (8, 0.0, 0), (0, 9.0, 16), (10, 9.0, 0), (0, 0.0, 16), (5, 0.0, 0),
    ],
}


def synthetic_cycle(kind: str, dt: float = 1.0) -> DrivingCycle:
    """Smooth stand-in cycle built from holds and raised-cosine speed ramps.

    ``kind`` is ``"highway"`` or ``"urban"``. Ramps are long enough that the
    leader's acceleration stays under 1 m/s^2 and its jerk well under 1 m/s^3.
    """
    if kind not in _SYNTHETIC_SEGMENTS:
        raise ValueError(f"unknown synthetic cycle {kind!r}; choose from {sorted(_SYNTHETIC_SEGMENTS)}")
    times, speeds = [0.0], [0.0]
    for hold, target, ramp in _SYNTHETIC_SEGMENTS[kind]:
        if hold:
            times.append(times[-1] + hold)
            speeds.append(speeds[-1])
        if ramp:
            t, v = times[-1], speeds[-1]
            k = np.arange(1, int(round(ramp / dt)) + 1) * dt
            times.extend(t + k)
            speeds.extend(v + (target - v) * 0.5 * (1 - np.cos(np.pi * k / ramp)))
    time = np.array(times)
    return DrivingCycle(f"synthetic-{kind}", dt, resample(time, np.array(speeds), dt))
