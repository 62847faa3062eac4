"""Sequential convex programming for the fuel-aware horizon problem."""

from __future__ import annotations

import time

import numpy as np

from ..ocp import build_sqp_subproblem
from .admm import ADMMSolver
from .common import HorizonSolution, SolveDiagnostics, SolverConfig
from .qp import solve_qp


def _dynamics_residual(nlp, arrays) -> float:
    return float(np.max(np.abs(nlp.dynamics.residual(arrays["V"], arrays["U"], arrays["A"], arrays["B"]))))


def initial_reference(nlp):
    """Constant speed at the current value, traction balancing resistance."""
    n1 = nlp.spec.n_steps + 1
    v = np.full(n1, float(nlp.x0[1]))
    u = np.clip(nlp.dynamics.resistance(v), 0.0, nlp.spec.u_max)
    return v, u


def solve_sqp(nlp, initial_reference_arrays=None, config: SolverConfig | None = None, solver: ADMMSolver | None = None,
              warm_start: HorizonSolution | None = None):
    """Iterate convexified subproblems, re-expanding around each solution.

    The returned arrays come from the last subproblem, so they satisfy the
    linearised dynamics; the residual of the exact dynamics is reported in
    ``diag.dynamics_residual``. With ``config.sqp_damping`` the step is
    halved (up to five times) whenever that residual grows between iterates.
    """
    if nlp.kind != "NLP":
        raise ValueError(f"solve_sqp needs an NLP problem, got {nlp.kind!r}")
    cfg = config or SolverConfig()
    solver = solver or ADMMSolver(cfg)
    solver.config = cfg
    t0 = time.perf_counter()
    v_ref, u_ref = initial_reference(nlp) if initial_reference_arrays is None else (
        np.asarray(initial_reference_arrays[0], float), np.asarray(initial_reference_arrays[1], float))
    spec = nlp.spec
    diag = SolveDiagnostics(status="max-iter")
    current = None
    current_res = np.inf
    sub_warm = warm_start
    qp_iters = 0
    for outer in range(1, cfg.sqp_max_outer_iterations + 1):
        sub = build_sqp_subproblem(nlp.x0, nlp.s_lead, nlp.v_lead, nlp.grade, nlp.dynamics.coeffs, nlp.fuel,
                                   v_ref, u_ref, spec)
        sol, d = solve_qp(sub, warm_start=sub_warm, solver=solver)
        qp_iters += d.iterations
        if not d.ok:
            diag.status = d.status
            diag.message = f"subproblem {outer}: {d.message or d.status}"
            diag.violated_index = d.violated_index
            diag.iterations = outer
            if current is None:
                current = sol
            break
        cand = sol.arrays()
        res = _dynamics_residual(nlp, cand)
        if cfg.sqp_damping and current is not None and res > current_res:
            base = current.arrays()
            step = 1.0
            for _ in range(5):
                step *= 0.5
                trial = {k: base[k] + step * (cand[k] - base[k]) for k in cand}
                if _dynamics_residual(nlp, trial) <= current_res:
                    break
            cand = trial
            res = _dynamics_residual(nlp, cand)
            sol = HorizonSolution(**cand, objective=np.nan, x=nlp.layout.join(**cand), y=sol.y)
        dv = float(np.max(np.abs(cand["V"] - v_ref)))
        du = float(np.max(np.abs(cand["U"] - u_ref)))
        current, current_res = sol, res
        sub_warm = sol
        v_ref, u_ref = cand["V"], cand["U"]
        if cfg.trace:
            diag.trace.append({"outer": outer, "step": dv + du, "dyn_res": res, "qp_iters": d.iterations})
        diag.iterations = outer
        diag.primal_residual, diag.dual_residual = d.primal_residual, d.dual_residual
        if dv + du <= cfg.sqp_step_tolerance:
            diag.status = "optimal"
            break
    arrays = current.arrays()
    diag.dynamics_residual = _dynamics_residual(nlp, arrays)
    diag.wall_time = (time.perf_counter() - t0) * 1e3
    out = HorizonSolution(**{k: np.array(v) for k, v in arrays.items()}, objective=nlp.objective(arrays),
                          slacks=current.slacks, x=nlp.layout.join(**arrays), y=current.y)
    return out, diag
