import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecotraj.environment import (
    FLAT,
    ROLLING,
    STEEP,
    DrivingCycle,
    LeadState,
    SlopeProfile,
    elevation_at,
    load_driving_cycle,
    predict_leading,
    predict_slope_sequence,
    save_driving_cycle,
    shifted_reference,
    slope_at,
    synthetic_cycle,
)
from ecotraj.experiments import bundled_cycle_path


def write_cycle(path, rows, header="time_s,speed_m_s"):
    path.write_text(header + "\n" + "\n".join(f"{t},{v}" for t, v in rows) + "\n")
    return path


class TestSlope:
    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 1e5))
    def test_flat(self, s):
        assert slope_at(s, FLAT) == 0.0

    def test_rolling_origin(self):
        assert slope_at(0.0, ROLLING) == 0.0

    def test_rolling_quarter_wave(self):
        val = slope_at(717.5, ROLLING)
        assert val == pytest.approx(0.04 + 0.02 * math.sin(2 * math.pi * 717.5 / 2136), rel=1e-14)
        assert val == pytest.approx(0.05715646224412281, rel=1e-14)
        assert val == pytest.approx(0.0573, abs=2e-4)

    def test_steep_offset(self):
        assert slope_at(0.0, STEEP) == pytest.approx(0.02)

    def test_rejects_vertical(self):
        with pytest.raises(ValueError, match="pi/2"):
            SlopeProfile(1.0, (0.6,), (100.0,))

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            SlopeProfile(0.0, (0.1, 0.2), (100.0,))

    def test_dict_round_trip(self):
        assert SlopeProfile.from_dict(STEEP.to_dict()) == STEEP

    def test_dict_unknown_key(self):
        with pytest.raises(ValueError, match="offset"):
            SlopeProfile.from_dict({"offset": 0.01})


class TestElevation:
    def test_flat(self):
        h = elevation_at(np.array([0.0, 10.0, 5000.0]), SlopeProfile(h0=3.0))
        assert np.all(h == 3.0)

    def test_constant_grade(self):
        h = elevation_at(1000.0, SlopeProfile(0.02))
        assert h == pytest.approx(1000 * math.tan(0.02), abs=1e-9)
        assert h == pytest.approx(20.0027, abs=1e-4)

    @pytest.mark.parametrize("amp,wl", [(0.04, 2870.0), (0.02, 2136.0), (0.05, 2380.0)])
    def test_full_sine_wave_cancels(self, amp, wl):
        prof = SlopeProfile(0.0, (amp,), (wl,))
        # fine-step oracle
        grid = np.linspace(0, wl, 200001)
        oracle = np.trapezoid(np.tan(slope_at(grid, prof)), grid)
        h = elevation_at(wl, prof)
        assert abs(h) <= 1e-3 * wl * amp
        assert h == pytest.approx(oracle, abs=1e-6)

    def test_between_nodes(self):
        prof = SlopeProfile(0.02)
        assert elevation_at(12.5, prof) == pytest.approx(12.5 * math.tan(0.02), abs=1e-12)

    def test_before_origin(self):
        with pytest.raises(ValueError):
            elevation_at(-1.0, FLAT)


class TestDrivingCycle:
    def test_constant_speed(self, tmp_path):
        c = load_driving_cycle(write_cycle(tmp_path / "c.csv", [(0, 10), (10, 10)]), dt=0.1)
        assert len(c.speed) == 101
        assert c.distance[-1] == pytest.approx(100.0, abs=1e-9)
        assert np.all(c.accel == 0)

    def test_ramp(self, tmp_path):
        c = load_driving_cycle(write_cycle(tmp_path / "c.csv", [(0, 0), (10, 10)]), dt=0.1)
        assert np.allclose(c.accel[:-1], 1.0)
        assert c.distance[-1] == pytest.approx(50.0, abs=1e-9)

    def test_negative_speed(self, tmp_path):
        with pytest.raises(ValueError, match="negative"):
            load_driving_cycle(write_cycle(tmp_path / "c.csv", [(0, 1), (1, -0.5)]))

    def test_bad_header(self, tmp_path):
        with pytest.raises(ValueError, match="header"):
            load_driving_cycle(write_cycle(tmp_path / "c.csv", [(0, 1), (1, 2)], header="t,v"))

    def test_non_monotone_time(self, tmp_path):
        with pytest.raises(ValueError, match="increasing"):
            load_driving_cycle(write_cycle(tmp_path / "c.csv", [(0, 1), (2, 2), (1, 2)]))

    def test_missing(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_driving_cycle(tmp_path / "nope.csv")

    def test_repeat_shares_boundary_sample(self):
        c = DrivingCycle("x", 1.0, [0.0, 5.0, 0.0])
        r = c.repeated(3)
        assert list(r.speed) == [0.0, 5.0, 0.0, 5.0, 0.0, 5.0, 0.0]
        assert r.distance[-1] == pytest.approx(3 * c.distance[-1])

    def test_save_load_round_trip(self, tmp_path):
        c = synthetic_cycle("urban")
        save_driving_cycle(c, tmp_path / "u.csv")
        back = load_driving_cycle(tmp_path / "u.csv", dt=1.0)
        assert np.allclose(back.speed, c.speed, atol=1e-6)


class TestSyntheticCycles:
    @pytest.mark.parametrize("kind", ["highway", "urban"])
    def test_bundled_csv_matches_generator(self, kind):
        bundled = load_driving_cycle(bundled_cycle_path(kind), dt=1.0)
        assert np.allclose(bundled.speed, synthetic_cycle(kind).speed, atol=1e-6)

    @pytest.mark.parametrize("kind", ["highway", "urban"])
    def test_smooth(self, kind):
        c = synthetic_cycle(kind, dt=0.1)
        assert c.speed[0] == 0.0 and c.speed[-1] == 0.0
        assert np.max(np.abs(c.accel)) < 1.0
        assert np.max(np.abs(np.diff(c.accel[:-1]))) / 0.1 < 1.0

    def test_unknown(self):
        with pytest.raises(ValueError):
            synthetic_cycle("rural")


class TestLeadingPrediction:
    def test_constant(self):
        s, v, a = predict_leading(LeadState(0.0, 10.0, 0.0), 10, 0.1)
        assert s[-1] == pytest.approx(10.0)
        assert np.all(v == 10.0)

    def test_first_step(self):
        s, v, _ = predict_leading(LeadState(0.0, 10.0, 1.0), 5, 0.1)
        assert v[1] == pytest.approx(10.1)
        assert s[1] == pytest.approx(1.005)

    def test_stop_clamp(self):
        _, v, a = predict_leading(LeadState(0.0, 0.05, -1.0), 20, 0.1)
        assert v[1] == 0.0 and np.all(v[1:] == 0.0)
        assert np.all(a[1:] == 0.0)

    def test_negative_speed_state(self):
        with pytest.raises(ValueError):
            LeadState(0.0, -1.0, 0.0)


class TestSlopePrediction:
    def test_flat(self):
        assert np.all(predict_slope_sequence(np.linspace(0, 100, 51), FLAT) == 0.0)

    def test_constant(self):
        assert np.allclose(predict_slope_sequence(np.linspace(0, 100, 51), SlopeProfile(0.02)), 0.02)

    def test_disabled_uses_current_position(self):
        s = np.linspace(700, 800, 51)
        g = predict_slope_sequence(s, ROLLING, use_prediction=False)
        assert np.all(g == slope_at(700.0, ROLLING))

    def test_shifted_reference(self):
        assert list(shifted_reference([1.0, 2.0, 3.0])) == [2.0, 3.0, 3.0]
