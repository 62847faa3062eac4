import csv
import json

import numpy as np
import pytest

from ecotraj.engine_map import synthetic_truck_map
from ecotraj.environment import FLAT, ROLLING, DrivingCycle, slope_at
from ecotraj.presets import SEDAN, SEDAN_FUEL, TRUCK, TRUCK_FUEL
from ecotraj.sim import (
    LOG_COLUMNS,
    EgoState,
    EpisodeConfig,
    MetricsError,
    agent_name,
    compute_metrics,
    execute_control,
    leader_metrics,
    leader_name,
    meter_fuel,
    metrics_from_totals,
    run_episode,
    write_metrics_json,
)
from ecotraj.solvers import HorizonSolution
from ecotraj.vehicle import derived_coeffs, resistance_accel

DT = 0.1


def plan(A=None, U=None, B=None, n=3):
    z = np.zeros(n)
    return HorizonSolution(S=z, V=z, U=z if U is None else np.full(n, U), A=z if A is None else np.full(n, A),
                           B=z if B is None else np.full(n, B), objective=0.0)


def constant_cycle(v=10.0, seconds=20.0):
    return DrivingCycle("const", DT, np.full(int(round(seconds / DT)) + 1, v))


class TestEgoState:
    def test_invariants(self):
        with pytest.raises(ValueError):
            EgoState(0.0, -1.0)
        with pytest.raises(ValueError):
            EgoState(0.0, 1.0, u=-0.1)

    def test_array(self):
        assert list(EgoState(1.0, 2.0, 3.0, 4.0, 0.5).as_array()) == [1.0, 2.0, 3.0, 4.0, 0.5]


class TestExecuteControl:
    def test_rest_flat_qp(self):
        x = execute_control(EgoState(0.0, 0.0), plan(A=0.0), "QP", 0.0, DT, TRUCK)
        assert (x.s, x.v, x.a_v, x.a_b) == (0.0, 0.0, 0.0, 0.0)
        # traction balances rolling resistance at rest
        assert x.u == pytest.approx(derived_coeffs(TRUCK).k2)

    def test_jerk_clamp(self):
        x = execute_control(EgoState(0.0, 10.0), plan(A=2.0), "QP", 0.0, DT, TRUCK)
        assert x.a_v == pytest.approx(0.1, abs=1e-12)
        assert x.v == pytest.approx(10.01)
        assert x.s == pytest.approx(1.0005)

    def test_qp_brake_split(self):
        k = derived_coeffs(TRUCK)
        x0 = EgoState(0.0, 10.0, a_v=-1.0)
        x = execute_control(x0, plan(A=-1.0), "QP", 0.0, DT, TRUCK)
        a_r = resistance_accel(10.0, 0.0, k)
        assert x.u == 0.0
        assert x.a_b == pytest.approx(1.0 - a_r)
        assert x.u == pytest.approx(x.a_v + a_r + x.a_b, abs=1e-12)

    def test_nlp_slope_mismatch(self):
        k = derived_coeffs(TRUCK)
        u0 = 0.4
        # planned on flat ground, executed on a 1 % grade
        planned = u0 - resistance_accel(15.0, 0.0, k)
        delta = resistance_accel(15.0, 0.01, k) - resistance_accel(15.0, 0.0, k)
        x0 = EgoState(0.0, 15.0, a_v=planned - delta)  # jerk clamp inactive
        x = execute_control(x0, plan(U=u0, B=0.0), "NLP", 0.01, DT, TRUCK)
        assert x.a_v == pytest.approx(planned - delta, abs=1e-12)
        assert x.u == u0

    def test_qp_traction_saturates(self):
        x0 = EgoState(0.0, 20.0, a_v=2.0)
        x = execute_control(x0, plan(A=2.0), "QP", 0.15, DT, TRUCK)
        assert x.u == TRUCK.u_max
        assert x.a_v == pytest.approx(TRUCK.u_max - resistance_accel(20.0, 0.15, derived_coeffs(TRUCK)))

    def test_never_reverses(self):
        x0 = EgoState(0.0, 0.05, a_v=-3.0)
        x = execute_control(x0, plan(A=-3.0), "QP", 0.0, DT, SEDAN)
        assert x.v == 0.0 and x.a_v == pytest.approx(-0.5)


class TestMeterFuel:
    def test_idle_second(self):
        assert sum(meter_fuel(EgoState(0.0, 0.0), SEDAN_FUEL, DT) for _ in range(10)) == pytest.approx(0.14627)

    def test_truck_one_second(self):
        total = sum(meter_fuel(EgoState(0.0, 10.0, 0.5), TRUCK_FUEL, DT) for _ in range(10))
        assert total == pytest.approx(4.747401192400001, rel=1e-12)

    def test_zero_traction_meters_model(self):
        rate = meter_fuel(EgoState(0.0, 20.0, 0.0), TRUCK_FUEL, 1.0)
        from ecotraj.fuel_model import fuel_rate_hat

        assert rate == pytest.approx(max(fuel_rate_hat(20.0, 0.0, TRUCK_FUEL), TRUCK_FUEL.o0))

    def test_floor(self):
        rng = np.random.default_rng(0)
        for v, u in zip(rng.uniform(0, 30, 200), rng.uniform(0, 3, 200)):
            assert meter_fuel(EgoState(0.0, v, u), SEDAN_FUEL, 1.0) >= SEDAN_FUEL.o0


class TestMetrics:
    def test_leading_row_identity(self):
        m = metrics_from_totals(13477.20, 123177.83, 20525.89)
        assert round(m.fuel_efficiency, 4) == 16.6636
        assert round(m.average_speed, 4) == 9.1397

    def test_improvement(self):
        m = metrics_from_totals(100.0, 1000.0, 142.306, leader_efficiency=16.6636)
        assert m.fuel_efficiency == pytest.approx(14.2306)
        assert round(m.efficiency_improvement_vs_leading, 2) == 14.60

    def test_zero_distance(self):
        with pytest.raises(MetricsError):
            metrics_from_totals(10.0, 0.0, 1.0)

    def test_empty_log(self):
        cfg = EpisodeConfig("truck", "QP", constant_cycle(seconds=1.0), horizon=0.5)
        _, log = run_episode(cfg)
        log.columns = {c: v[:0] for c, v in log.columns.items()}
        with pytest.raises(MetricsError):
            compute_metrics(log)

    def test_names(self):
        assert agent_name("truck", "NLP", 5.0, False) == "Truck-NLP-5F"
        assert agent_name("sedan", "QP", 10.0) == "Sedan-QP-10"
        assert leader_name("truck") == "Truck-L"


class TestEpisodeConfig:
    def test_bad_method(self):
        with pytest.raises(ValueError):
            EpisodeConfig("truck", "MPC", constant_cycle())

    def test_dt_mismatch(self):
        with pytest.raises(ValueError):
            EpisodeConfig("truck", "QP", DrivingCycle("c", 1.0, [1.0, 1.0]))

    def test_horizon_steps(self):
        cfg = EpisodeConfig("truck", "NLP", constant_cycle(), horizon=5.0)
        assert cfg.n_steps == 50
        assert cfg.agent_id == "Truck-NLP-5"
        spec = cfg.horizon_spec()
        assert (spec.w1, spec.w2, spec.w3, spec.d_min, spec.d_max) == (0.1, 5.0, 10.0, 10.0, 100.0)

    def test_initial_gap_out_of_range(self):
        cfg = EpisodeConfig("truck", "QP", constant_cycle(v=0.0), d_init=5.0)
        with pytest.raises(ValueError, match="initial gap"):
            run_episode(cfg)


def _check_log(log, params, road):
    """Independent recomputation of the log relations from the raw columns."""
    c = log.columns
    dt = log.dt
    s = np.append(c["s"], log.final_s)
    v = np.append(c["v"], log.final_v)
    a = c["a_v"]
    assert np.max(np.abs(s[1:] - s[:-1] - v[:-1] * dt - 0.5 * a * dt * dt)) <= 1e-9
    assert np.max(np.abs(v[1:] - v[:-1] - a * dt)) <= 1e-9
    k = derived_coeffs(params)
    theta = slope_at(c["s"], road)
    assert np.array_equal(theta, c["theta"])
    a_r = k.k1 * c["v"] ** 2 + k.k2 * np.cos(theta) + k.k3 * np.sin(theta)
    assert np.max(np.abs(c["u"] - (c["a_v"] + a_r + c["a_b"]))) <= 1e-9
    assert np.all(np.diff(c["fuel_cum"]) >= 0)
    assert np.all(np.abs(np.diff(np.append(0.0, a))) <= params.jerk_max * dt + 1e-12)
    assert np.all(c["u"] >= 0) and np.all(c["u"] <= params.u_max)
    assert np.all(c["a_b"] >= 0) and np.all(c["a_b"] <= params.b_max)


class TestEpisodes:
    @pytest.mark.parametrize("method", ["QP", "SQP", "NLP"])
    def test_steady_state(self, method):
        cfg = EpisodeConfig("truck", method, constant_cycle(10.0, 15.0), horizon=2.0)
        metrics, log = run_episode(cfg)
        assert metrics.completed and metrics.constraint_violation_count == 0
        gaps = log.gaps()
        assert np.all((gaps > 10.0 - 1e-3) & (gaps < 100.0 + 1e-3))
        if method == "QP":
            assert np.max(np.abs(log.columns["v"] - 10.0)) < 0.5
        _check_log(log, TRUCK, FLAT)

    @pytest.mark.parametrize("method", ["QP", "NLP"])
    def test_log_relations_on_hills(self, method):
        speed = np.concatenate([np.full(50, 8.0), 8.0 + 0.05 * np.arange(1, 101), np.full(100, 13.0)])
        cycle = DrivingCycle("ramp", DT, speed)
        cfg = EpisodeConfig("sedan", method, cycle, road=ROLLING, horizon=2.0)
        metrics, log = run_episode(cfg)
        assert metrics.completed
        _check_log(log, SEDAN, ROLLING)

    def test_metric_identities(self):
        cfg = EpisodeConfig("sedan", "QP", constant_cycle(12.0, 10.0), horizon=1.0)
        m, log = run_episode(cfg)
        c = log.columns
        dist = log.final_s - c["s"][0]
        assert m.travel_time == pytest.approx(log.steps * DT)
        assert m.travel_distance == dist
        assert m.fuel_efficiency == pytest.approx(c["fuel_cum"][-1] * 100.0 / dist, rel=1e-15)
        assert m.average_speed == pytest.approx(dist / m.travel_time, rel=1e-15)
        lead = leader_metrics(log)
        assert m.efficiency_improvement_vs_leading == pytest.approx(
            (lead.fuel_efficiency - m.fuel_efficiency) / lead.fuel_efficiency * 100, rel=1e-12)
        assert m.average_solve_time == pytest.approx(float(np.mean(c["solve_ms"])))

    def test_deterministic(self):
        cfg = EpisodeConfig("truck", "NLP", constant_cycle(10.0, 5.0), road=ROLLING, horizon=1.0)
        m1, l1 = run_episode(cfg)
        m2, l2 = run_episode(cfg)
        for c in LOG_COLUMNS:
            if c != "solve_ms":
                assert np.array_equal(l1.columns[c], l2.columns[c])
        d1, d2 = m1.to_dict(), m2.to_dict()
        d1.pop("average_solve_time"), d2.pop("average_solve_time")
        assert d1 == d2

    def test_leader_brakes_too_hard(self):
        speed = np.concatenate([np.full(30, 20.0), np.zeros(80)])
        cfg = EpisodeConfig("truck", "QP", DrivingCycle("panic", DT, speed), horizon=1.0)
        metrics, log = run_episode(cfg)
        assert not metrics.completed
        assert log.fail_step is not None and log.fail_step > 0
        assert log.steps == log.fail_step
        assert log.fail_reason

    def test_map_metering_cross_check(self):
        cfg = EpisodeConfig("truck", "QP", constant_cycle(10.0, 5.0), horizon=1.0, engine_map=synthetic_truck_map())
        _, log = run_episode(cfg)
        assert log.map_fuel > 0 and log.lead_map_fuel > 0

    def test_outputs(self, tmp_path):
        cfg = EpisodeConfig("sedan", "QP", constant_cycle(10.0, 2.0), horizon=1.0)
        m, log = run_episode(cfg)
        log.write_csv(tmp_path / "log.csv")
        with open(tmp_path / "log.csv") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == LOG_COLUMNS
        assert len(rows) == log.steps + 1
        write_metrics_json(m, tmp_path / "m.json", {"agent_id": cfg.agent_id})
        doc = json.loads((tmp_path / "m.json").read_text())
        assert set(m.to_dict()) <= set(doc) and doc["agent_id"] == "Sedan-QP-1"
