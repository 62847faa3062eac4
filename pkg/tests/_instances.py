"""Random but feasible horizon problems shared by the solver and acceptance tests."""

import numpy as np

from ecotraj.environment import LeadState, predict_leading
from ecotraj.ocp import HorizonSpec, build_nlp, build_qp, build_sqp_subproblem
from ecotraj.presets import SEDAN, SEDAN_FUEL, TRUCK, TRUCK_FUEL
from ecotraj.vehicle import derived_coeffs

VEHICLES = ((TRUCK, TRUCK_FUEL), (SEDAN, SEDAN_FUEL))


def _scene(rng, n):
    v0 = rng.uniform(0.0, 25.0)
    lead_v = max(0.0, v0 + rng.uniform(-2.0, 2.0))
    lead_a = rng.uniform(-1.0, 1.0)
    gap = rng.uniform(30.0, 70.0)
    s0 = rng.uniform(0.0, 1000.0)
    s_l, v_l, _ = predict_leading(LeadState(s0 + gap + 1.5 * v0, lead_v, lead_a), n, 0.1)
    return np.array([s0, v0, 0.0, 0.0, 0.0]), s_l, v_l


def random_qp(rng, n=None):
    n = n or int(rng.integers(1, 11))
    params, _ = VEHICLES[int(rng.integers(2))]
    spec = HorizonSpec.from_vehicle(params, n, w1=rng.uniform(0.05, 1.0), w2=rng.uniform(0.5, 5.0))
    x0, s_l, v_l = _scene(rng, n)
    return build_qp(x0, s_l, v_l, spec)


def random_nlp(rng, n=None, w3=None, grade_amp=0.05):
    n = n or int(rng.integers(1, 11))
    params, fuel = VEHICLES[int(rng.integers(2))]
    spec = HorizonSpec.from_vehicle(
        params, n, w1=0.1, w2=5.0, w3=rng.uniform(0.0, 10.0) if w3 is None else w3,
    )
    x0, s_l, v_l = _scene(rng, n)
    grade = rng.uniform(-grade_amp, grade_amp) + np.zeros(n + 1)
    return build_nlp(x0, s_l, v_l, grade, derived_coeffs(params), fuel, spec)


def random_sqp_subproblem(rng, n=None):
    nlp = random_nlp(rng, n)
    n1 = nlp.spec.n_steps + 1
    v_ref = np.clip(nlp.x0[1] + rng.uniform(-1.0, 1.0, n1), 0.0, nlp.spec.v_max)
    u_ref = rng.uniform(0.0, 1.5, n1)
    return build_sqp_subproblem(
        nlp.x0, nlp.s_lead, nlp.v_lead, nlp.grade, nlp.dynamics.coeffs, nlp.fuel, v_ref, u_ref, nlp.spec,
    )


def random_horizon_qps(seed, count):
    """Mix of tracking QPs and convexified fuel-aware subproblems."""
    rng = np.random.default_rng(seed)
    return [random_qp(rng) if i % 2 == 0 else random_sqp_subproblem(rng) for i in range(count)]
