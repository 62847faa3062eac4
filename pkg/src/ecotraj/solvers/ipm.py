"""Primal-dual interior-point solver for the fuel-aware horizon problem.

The kinematic and dynamic equalities are eliminated: with controls
``x = (A, B)`` the speed and distance follow from cumulative sums and
traction from ``U = A + B + R(V)``. What remains is a dense problem in
``2 (N + 1)`` variables with inequality constraints only, which is solved by
a slack-based barrier method with a Cholesky-regularised Newton system and an
l1 merit line search.
"""

from __future__ import annotations

import time

import numpy as np
from scipy.linalg import cho_solve

from ..fuel_model import fuel_rate_hat, fuel_rate_hat_derivatives
from ..ocp import ACC_MARGIN
from .common import HorizonSolution, SolveDiagnostics, SolverConfig

TAU = 0.995
ARMIJO = 1e-4
MAX_IPM_ITER = 200
GAP_FACTOR = 1e-2


class _Condensed:
    """Affine maps from accelerations to speed and distance over the horizon."""

    def __init__(self, n_steps: int, dt: float):
        n1 = n_steps + 1
        strict = np.tril(np.ones((n1, n1)), -1)
        self.PV = dt * strict
        self.PS = dt * strict @ self.PV + 0.5 * dt * dt * strict
        self.cum_t = dt * np.arange(n1)
        self.n1 = n1


class NLPSolver:
    """Reusable workspace (cached horizon maps); one instance per thread."""

    def __init__(self, config: SolverConfig | None = None):
        self.config = config or SolverConfig()
        self._maps: dict = {}

    def _condensed(self, n_steps, dt):
        key = (n_steps, dt)
        if key not in self._maps:
            self._maps[key] = _Condensed(n_steps, dt)
        return self._maps[key]

    def solve(self, problem, warm_start: HorizonSolution | None = None):
        t0 = time.perf_counter()
        cfg = self.config
        spec = problem.spec
        n1 = spec.n_steps + 1
        cm = self._condensed(spec.n_steps, spec.dt)
        s0, v0 = float(problem.x0[0]), float(problem.x0[1])
        dyn = problem.dynamics
        k = dyn.coeffs
        G = problem.grade
        r_const = k.k2 * np.cos(G) + k.k3 * np.sin(G)
        fuel = problem.fuel
        w1, w2, w3 = spec.w1, spec.w2, spec.w3
        vl = problem.v_lead
        S_base = s0 + v0 * cm.cum_t
        V_base = np.full(n1, v0)
        lo_acc = problem.s_lead - spec.d_max + ACC_MARGIN
        hi_acc = problem.s_lead - spec.d_min - ACC_MARGIN

        diag = SolveDiagnostics(status="max-iter")
        g0 = S_base[0] + spec.time_headway * V_base[0]
        if g0 < lo_acc[0] - cfg.feasibility_tolerance or g0 > hi_acc[0] + cfg.feasibility_tolerance:
            diag.status = "infeasible"
            diag.violated_index = 0
            diag.message = "headway constraint violated at the fixed initial state"
            diag.wall_time = (time.perf_counter() - t0) * 1e3
            return self._finish(problem, cm, np.zeros(n1), np.zeros(n1), None, diag)

        # linear rows G_lin x + h_lin >= 0 over x = (A, B)
        th = spec.time_headway
        M_gap = cm.PS[1:] + th * cm.PV[1:]
        c_gap = S_base[1:] + th * V_base[1:]
        Z = np.zeros((n1 - 1, n1))
        I = np.eye(n1)
        ZI = np.zeros((n1, n1))
        G_lin = np.vstack([
            np.hstack([M_gap, Z]), np.hstack([-M_gap, Z]),
            np.hstack([cm.PV[1:], Z]), np.hstack([-cm.PV[1:], Z]),
            np.hstack([I, ZI]), np.hstack([-I, ZI]),
            np.hstack([ZI, I]), np.hstack([ZI, -I]),
        ])
        h_lin = np.concatenate([
            c_gap - lo_acc[1:], hi_acc[1:] - c_gap,
            V_base[1:], spec.v_max - V_base[1:],
            np.full(n1, spec.b_max), np.full(n1, spec.a_v_max),
            np.zeros(n1), np.full(n1, spec.b_max),
        ])
        m_lin = len(h_lin)
        m = m_lin + 2 * n1
        PV = cm.PV

        def states(x):
            A, B = x[:n1], x[n1:]
            V = V_base + PV @ A
            U = A + B + k.k1 * V * V + r_const
            return A, B, V, U

        def constraints(x):
            A, B, V, U = states(x)
            return np.concatenate([G_lin @ x + h_lin, U, spec.u_max - U]), V, U

        def jac(V):
            JU_A = I + dyn.resistance_derivatives(V)[0][:, None] * PV
            JU = np.hstack([JU_A, I])
            return np.vstack([G_lin, JU, -JU])

        def objective(x, V, U):
            A, B = x[:n1], x[n1:]
            val = w1 * np.sum((vl - V) ** 2) + w2 * (A @ A + B @ B)
            if w3:
                val += w3 * np.sum(fuel_rate_hat(V, U, fuel))
            return float(val)

        def derivs(x, V, U, y_u_lo, y_u_hi):
            A, B = x[:n1], x[n1:]
            if w3:
                f_v, f_u, f_vv, _, f_vu = fuel_rate_hat_derivatives(V, U, fuel)
            else:
                f_v = f_u = f_vv = f_vu = np.zeros(n1)
            phi_v = -2 * w1 * (vl - V) + w3 * f_v
            phi_u = w3 * f_u
            phi_vv = 2 * w1 + w3 * f_vv
            phi_vu = w3 * f_vu
            dR, d2R = dyn.resistance_derivatives(V)
            psi_v = phi_v + phi_u * dR
            psi_w = phi_u
            psi_vv = phi_vv + 2 * phi_vu * dR + (phi_u - y_u_lo + y_u_hi) * d2R
            psi_vw = phi_vu
            grad = np.concatenate([PV.T @ psi_v + psi_w + 2 * w2 * A, psi_w + 2 * w2 * B])
            T = PV.T * psi_vv
            cross = PV.T * psi_vw
            H_AA = T @ PV + cross + cross.T + 2 * w2 * I
            H_AB = cross
            H = np.block([[H_AA, H_AB], [H_AB.T, 2 * w2 * I]])
            return grad, H

        # initial point
        if warm_start is not None and warm_start.A is not None and np.all(np.isfinite(warm_start.A)) and np.all(np.isfinite(warm_start.B)):
            x = np.concatenate([np.asarray(warm_start.A, float), np.asarray(warm_start.B, float)])
        else:
            x = np.zeros(2 * n1)
        g, V, U = constraints(x)
        warm_y = warm_start.y if (warm_start is not None and warm_start.y is not None and len(warm_start.y) == m) else None
        if warm_y is not None:
            y = np.maximum(np.asarray(warm_y, float), 1e-12)
            s = np.maximum(g, 1e-12)
            mu = max(float(s @ y) / m, 1e-10)
        else:
            mu = 0.1
            s = np.maximum(g, 1e-2)
            y = mu / s

        nu = 10.0
        delta_prev = 0.0
        tol_f, tol_o = cfg.feasibility_tolerance, cfg.optimality_tolerance
        it = 0
        for it in range(0, min(cfg.max_iterations, MAX_IPM_ITER) + 1):
            J = jac(V)
            grad, Hf = derivs(x, V, U, y[m_lin:m_lin + n1], y[m_lin + n1:])
            r_d = grad - J.T @ y
            r_p = g - s
            comp = s * y
            gscale = max(1.0, float(np.max(np.abs(grad))))
            stat = float(np.max(np.abs(r_d))) / gscale
            feas = float(np.max(np.maximum(-g, 0.0)))
            diag.primal_residual, diag.dual_residual = feas, stat
            if cfg.trace:
                diag.trace.append({"iter": it, "stat": stat, "feas": feas, "comp": float(np.max(comp)), "mu": mu})
            # complementarity gap bounds the objective error, so scale it by the objective
            gap_ok = float(comp.sum()) <= GAP_FACTOR * tol_o * max(1.0, abs(objective(x, V, U)))
            if stat <= tol_o and feas <= tol_f and np.max(np.abs(r_p)) <= tol_f and gap_ok:
                diag.status = "optimal"
                break
            if it == min(cfg.max_iterations, MAX_IPM_ITER):
                break
            if cfg.time_limit is not None and (time.perf_counter() - t0) * 1e3 > cfg.time_limit:
                diag.status = "time-limit"
                break

            avg = float(comp.sum()) / m
            xi = float(comp.min()) / avg if avg > 0 else 1.0
            sigma = 0.1 * min(0.05 * (1 - xi) / max(xi, 1e-12), 2.0) ** 3
            mu = max(sigma * avg, GAP_FACTOR * tol_o * 1e-2 / m)

            Sig = y / s
            Mmat = Hf + (J.T * Sig) @ J
            rhs = -r_d - J.T @ ((comp - mu) / s + Sig * r_p)
            L, delta_prev = _regularized_cholesky(Mmat, delta_prev)
            dx = cho_solve((L, True), rhs)
            ds = J @ dx + r_p
            dy = -(comp - mu + y * ds) / s

            a_s = _max_step(s, ds)
            a_y = _max_step(y, dy)

            nu = max(nu, 1.1 * float(np.max(np.abs(y + a_y * dy))))
            phi0 = objective(x, V, U) - mu * np.sum(np.log(s)) + nu * np.sum(np.abs(r_p))
            dphi = grad @ dx - mu * np.sum(ds / s) - nu * np.sum(np.abs(r_p))
            alpha = a_s
            for _ in range(30):
                xn = x + alpha * dx
                sn = s + alpha * ds
                gn, Vn, Un = constraints(xn)
                phin = objective(xn, Vn, Un) - mu * np.sum(np.log(sn)) + nu * np.sum(np.abs(gn - sn))
                if dphi >= 0 or phin <= phi0 + ARMIJO * alpha * dphi:
                    break
                alpha *= 0.5
            x, s, g, V, U = xn, sn, gn, Vn, Un
            y = y + min(a_y, max(alpha, 0.1 * a_y)) * dy
            y = np.maximum(y, 1e-20)

        diag.iterations = it
        diag.wall_time = (time.perf_counter() - t0) * 1e3
        if diag.status != "optimal" and diag.message == "":
            diag.message = f"stationarity {diag.dual_residual:.3g}, feasibility {diag.primal_residual:.3g}"
            if diag.primal_residual > tol_f:
                gi = int(np.argmin(g))
                diag.violated_index = gi
        return self._finish(problem, cm, x[:n1], x[n1:], y, diag)

    def _finish(self, problem, cm, A, B, y, diag):
        spec = problem.spec
        s0, v0 = float(problem.x0[0]), float(problem.x0[1])
        k = problem.dynamics.coeffs
        G = problem.grade
        # roll the states forward step by step (exact kinematic recursion)
        n1 = spec.n_steps + 1
        dt = spec.dt
        S = np.empty(n1)
        V = np.empty(n1)
        S[0], V[0] = s0, v0
        for i in range(n1 - 1):
            S[i + 1] = S[i] + V[i] * dt + 0.5 * A[i] * dt * dt
            V[i + 1] = V[i] + A[i] * dt
        U = A + B + k.k1 * V * V + k.k2 * np.cos(G) + k.k3 * np.sin(G)
        arrays = {"S": S, "V": V, "U": U, "A": np.array(A), "B": np.array(B)}
        obj = problem.objective(arrays)
        slacks = {}
        x_full = problem.layout.join(**arrays)
        for b in problem.constraints:
            r = b.evaluate(x_full)
            slacks[b.name] = np.minimum(r - b.lower, b.upper - r)
        return HorizonSolution(**arrays, objective=obj, slacks=slacks, x=x_full, y=y), diag


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, TAU * np.min(-v[neg] / dv[neg])))


def _regularized_cholesky(M, delta_prev):
    """Cholesky of ``M + delta I`` with the smallest tried ``delta`` that works."""
    try:
        return np.linalg.cholesky(M), 0.0
    except np.linalg.LinAlgError:
        pass
    scale = max(1.0, float(np.max(np.abs(np.diag(M)))))
    delta = max(1e-8 * scale, delta_prev / 3) if delta_prev > 0 else 1e-4 * scale
    n = M.shape[0]
    for _ in range(60):
        try:
            return np.linalg.cholesky(M + delta * np.eye(n)), delta
        except np.linalg.LinAlgError:
            delta *= 8
    raise np.linalg.LinAlgError("could not regularise Newton matrix")


def solve_nlp(problem, warm_start: HorizonSolution | None = None, config: SolverConfig | None = None, solver: NLPSolver | None = None):
    if problem.kind != "NLP":
        raise ValueError(f"solve_nlp needs an NLP problem, got {problem.kind!r}")
    solver = solver or NLPSolver(config)
    if config is not None:
        solver.config = config
    return solver.solve(problem, warm_start)
