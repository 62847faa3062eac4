"""Operator-splitting QP solver with banded Cholesky factorisation.

Solves ``min 1/2 x'Px + q'x  s.t.  l <= Cx <= u`` by ADMM on the splitting
``z = Cx``. Step-major variable ordering makes ``P + sigma I + C' diag(rho) C``
a banded matrix, so each factorisation and solve costs O(n * band^2).
Iterates are periodically "polished": the active set guessed from the duals
is solved exactly as an equality-constrained QP and accepted when it passes
the KKT checks.
"""

from __future__ import annotations

import hashlib
import time

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve_banded, cholesky_banded
from scipy.sparse.linalg import splu

from .common import SolveDiagnostics, SolverConfig

SIGMA = 1e-6
ALPHA = 1.6
RHO0 = 0.1
RHO_EQ_FACTOR = 1e3
RHO_MIN, RHO_MAX = 1e-6, 1e6
INF = 1e20
CHECK_EVERY = 10
POLISH_DELTA = 1e-9
POLISH_ROUNDS = 4


def lower_bandwidth(mat: sp.spmatrix) -> int:
    coo = mat.tocoo()
    if coo.nnz == 0:
        return 0
    return int(np.max(np.abs(coo.row - coo.col)))


def to_lower_banded(mat: sp.spmatrix, bw: int) -> np.ndarray:
    """Symmetric sparse matrix -> LAPACK lower banded storage."""
    coo = mat.tocsr().tocoo()
    keep = coo.row >= coo.col
    ab = np.zeros((bw + 1, mat.shape[0]))
    ab[coo.row[keep] - coo.col[keep], coo.col[keep]] = coo.data[keep]
    return ab


def _abs_max(index, data, size) -> np.ndarray:
    out = np.zeros(size)
    np.maximum.at(out, index, np.abs(data))
    return out


def _matrix_key(P, C) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    for m in (P.tocsc(), C.tocsc()):
        h.update(np.asarray(m.shape).tobytes())
        h.update(m.indptr.tobytes())
        h.update(m.indices.tobytes())
        h.update(m.data.tobytes())
    return h.digest()


class _Scaled:
    """Ruiz-equilibrated copy of (P, C) with its diagonal scalings."""

    def __init__(self, P, C, iterations=10):
        n, m = P.shape[0], C.shape[0]
        D = np.ones(n)
        E = np.ones(m)
        # equilibrate on COO data; the sparsity pattern never changes
        Pc, Cc = P.tocoo(), C.tocoo()
        p_data, c_data = Pc.data.astype(float), Cc.data.astype(float)
        for _ in range(iterations):
            col = np.maximum(_abs_max(Pc.col, p_data, n), _abs_max(Cc.col, c_data, n))
            row = _abs_max(Cc.row, c_data, m)
            dD = 1.0 / np.sqrt(np.clip(col, 1e-4, 1e4))
            dD[col == 0] = 1.0
            dE = 1.0 / np.sqrt(np.clip(row, 1e-4, 1e4))
            dE[row == 0] = 1.0
            p_data = p_data * dD[Pc.row] * dD[Pc.col]
            c_data = c_data * dE[Cc.row] * dD[Cc.col]
            D *= dD
            E *= dE
        Ps = sp.csc_matrix((p_data, (Pc.row, Pc.col)), shape=P.shape)
        Cs = sp.csc_matrix((c_data, (Cc.row, Cc.col)), shape=C.shape)
        pn = _abs_max(Pc.col, p_data, n)
        mean = float(np.mean(pn)) if n else 1.0
        self.c = 1.0 / np.clip(mean, 1e-4, 1e4) if mean > 0 else 1.0
        self.P = (Ps * self.c).tocsc()
        self.C = Cs
        self.CT = Cs.T.tocsc()
        self.D = D
        self.E = E
        self.bw = max(lower_bandwidth(self.P), lower_bandwidth(Cs.T @ Cs) if m else 0)
        # full KKT matrices for polishing; active rows are sliced out per solve
        self.kkt = sp.bmat([[self.P, self.CT], [self.C, None]], format="csr")
        self.kkt_reg = (self.kkt + sp.diags(np.r_[np.full(n, POLISH_DELTA), np.full(m, -POLISH_DELTA)])).tocsr()


class ADMMSolver:
    """Reusable workspace; caches scaling and factorisation across solves.

    Receding-horizon problems keep ``P`` and ``C`` fixed while bounds and the
    linear term move, so repeated solves skip equilibration and factorising.
    Not safe to share between threads.
    """

    def __init__(self, config: SolverConfig | None = None):
        self.config = config or SolverConfig()
        self._key = None
        self._scaled = None
        self._rho = None
        self._factor = None
        self._factor_rho = None

    def _prepare(self, qp):
        key = _matrix_key(qp.P, qp.C)
        if key != self._key:
            self._key = key
            self._scaled = _Scaled(qp.P, qp.C)
            self._rho = RHO0
            self._factor = None
        return self._scaled

    def _factorize(self, sc, rho_vec):
        if self._factor is not None and self._factor_rho is not None and np.array_equal(self._factor_rho, rho_vec):
            return self._factor
        n = sc.P.shape[0]
        K = sc.P + SIGMA * sp.identity(n, format="csc") + sc.CT @ sp.diags(rho_vec) @ sc.C
        ab = to_lower_banded(K, sc.bw)
        self._factor = cholesky_banded(ab, lower=True)
        self._factor_rho = rho_vec.copy()
        return self._factor

    def solve(self, qp, warm_x=None, warm_y=None):
        cfg = self.config
        t0 = time.perf_counter()
        sc = self._prepare(qp)
        n, m = qp.n, qp.m
        D, E, c = sc.D, sc.E, sc.c
        q = c * D * qp.q
        lo = np.where(np.isfinite(qp.l), E * np.nan_to_num(qp.l, neginf=-INF), -INF)
        hi = np.where(np.isfinite(qp.u), E * np.nan_to_num(qp.u, posinf=INF), INF)
        eq = (qp.l == qp.u)
        free = (lo <= -INF) & (hi >= INF)

        def rho_vector(rho):
            r = np.full(m, rho)
            r[eq] = RHO_EQ_FACTOR * rho
            r[free] = RHO_MIN
            return r

        x = np.zeros(n) if warm_x is None else np.asarray(warm_x, dtype=float) / D
        y = np.zeros(m) if warm_y is None else c * np.asarray(warm_y, dtype=float) / E
        z = np.clip(sc.C @ x, lo, hi)
        rho = self._rho
        rho_vec = rho_vector(rho)
        L = self._factorize(sc, rho_vec)

        diag = SolveDiagnostics(status="max-iter")
        y_check = y.copy()
        best = None
        if warm_x is not None and warm_y is not None:
            # a good warm start often already has the right active set
            polished = self._polish(sc, qp, q, lo, hi, x, z, y)
            if polished is not None:
                xs, ys, pr, dr = polished
                diag.status = "optimal"
                diag.primal_residual, diag.dual_residual = pr, dr
                diag.wall_time = (time.perf_counter() - t0) * 1e3
                return xs, ys, diag
        for it in range(1, cfg.max_iterations + 1):
            rhs = SIGMA * x - q + sc.CT @ (rho_vec * z - y)
            xt = cho_solve_banded((L, True), rhs, check_finite=False)
            zt = sc.C @ xt
            x = ALPHA * xt + (1 - ALPHA) * x
            zr = ALPHA * zt + (1 - ALPHA) * z
            z_new = np.clip(zr + y / rho_vec, lo, hi)
            y = y + rho_vec * (zr - z_new)
            z = z_new

            if it % CHECK_EVERY and it != cfg.max_iterations:
                continue
            Cx = sc.C @ x
            Px = sc.P @ x
            CTy = sc.CT @ y
            prim = float(np.max(np.abs((Cx - z) / E))) if m else 0.0
            dual = float(np.max(np.abs((Px + q + CTy) / D))) / c
            prim_scale = max(np.max(np.abs(Cx / E)) if m else 0.0, np.max(np.abs(z / E)) if m else 0.0, 1.0)
            dual_scale = max(
                np.max(np.abs(Px / D)) / c, np.max(np.abs(CTy / D)) / c, np.max(np.abs(q / D)) / c, 1.0
            )
            diag.iterations = it
            diag.primal_residual, diag.dual_residual = prim, dual
            if cfg.trace:
                diag.trace.append({"iter": it, "prim": prim, "dual": dual, "rho": rho})

            if prim <= 1e-3 * prim_scale and dual <= 1e-3 * dual_scale:
                polished = self._polish(sc, qp, q, lo, hi, x, z, y)
                if polished is not None:
                    xs, ys, pr, dr = polished
                    diag.status = "optimal"
                    diag.primal_residual, diag.dual_residual = pr, dr
                    best = (xs, ys)
                    break
            if prim <= cfg.feasibility_tolerance and dual <= cfg.optimality_tolerance:
                diag.status = "optimal"
                best = (D * x, E * y / c)
                break

            if m and it >= 5 * CHECK_EVERY:
                dy = y - y_check
                ndy = np.max(np.abs(E * dy))
                if ndy > 1e-8:
                    cert = np.max(np.abs(sc.CT @ dy / D)) <= 1e-6 * ndy
                    up = np.where(hi < INF, hi, 0.0) @ np.maximum(dy, 0) + np.where(lo > -INF, lo, 0.0) @ np.minimum(dy, 0)
                    unbounded = np.any((dy > 1e-9 * ndy) & (hi >= INF)) or np.any((dy < -1e-9 * ndy) & (lo <= -INF))
                    if cert and up < -1e-6 * ndy and not unbounded:
                        diag.status = "infeasible"
                        break
            y_check = y.copy()

            if cfg.time_limit is not None and (time.perf_counter() - t0) * 1e3 > cfg.time_limit:
                diag.status = "time-limit"
                break

            # rebalance primal/dual progress
            ratio = np.sqrt((prim / prim_scale + 1e-30) / (dual / dual_scale + 1e-30))
            new_rho = float(np.clip(rho * ratio, RHO_MIN, RHO_MAX))
            if new_rho > 5 * rho or new_rho < 0.2 * rho:
                rho = new_rho
                rho_vec = rho_vector(rho)
                L = self._factorize(sc, rho_vec)

        self._rho = rho
        if best is None:
            best = (D * x, E * y / c)
        xs, ys = best
        if diag.status in ("infeasible", "max-iter", "time-limit"):
            r = qp.C @ xs
            viol = np.maximum(qp.l - r, r - qp.u)
            diag.violated_index = int(np.argmax(viol)) if m else None
            diag.message = f"most violated row {diag.violated_index} by {float(np.max(viol)) if m else 0.0:.3g}"
        diag.wall_time = (time.perf_counter() - t0) * 1e3
        return xs, ys, diag

    def _polish(self, sc, qp, q, lo, hi, x, z, y):
        """Solve the equality-constrained KKT system on a guessed active set.

        The guess comes from the ADMM iterate; if the polished point violates
        a row or a multiplier has the wrong sign, the set is corrected and the
        solve repeated a few times (degenerate problems need this).
        """
        n = sc.P.shape[0]
        eqm = lo == hi
        low = eqm | (z - lo < -y)
        upp = ~eqm & (hi - z < y)
        low &= lo > -INF
        upp &= hi < INF
        cfg = self.config
        D, E, c = sc.D, sc.E, sc.c
        lo_u = np.where(np.isfinite(qp.l), qp.l, -np.inf)
        hi_u = np.where(np.isfinite(qp.u), qp.u, np.inf)
        for _ in range(POLISH_ROUNDS):
            act = np.flatnonzero(low | upp)
            b = np.where(low, lo, hi)[act]
            idx = np.r_[np.arange(n), n + act]
            K = sc.kkt[idx][:, idx]
            Kreg = sc.kkt_reg[idx][:, idx].tocsc()
            rhs = np.concatenate([-q, b])
            try:
                lu = splu(Kreg)
            except RuntimeError:
                return None
            sol = lu.solve(rhs)
            for _ in range(3):
                sol = sol + lu.solve(rhs - K @ sol)
            if not np.all(np.isfinite(sol)):
                return None
            ys = np.zeros(len(lo))
            ys[act] = sol[n:]
            xu = D * sol[:n]
            yu = E * ys / c
            r = qp.C @ xu
            below, above = lo_u - r, r - hi_u
            prim = float(np.max(np.maximum(np.maximum(below, above), 0.0))) if len(r) else 0.0
            dual = float(np.max(np.abs(qp.P @ xu + qp.q + qp.C.T @ yu)))
            dual_tol = cfg.optimality_tolerance * max(1.0, float(np.max(np.abs(qp.q))), float(np.max(np.abs(qp.P @ xu))))
            wrong_low = low & ~eqm & (yu > dual_tol)
            wrong_upp = upp & (yu < -dual_tol)
            if prim <= cfg.feasibility_tolerance and dual <= dual_tol and not (wrong_low.any() or wrong_upp.any()):
                yu[low & ~eqm] = np.minimum(yu[low & ~eqm], 0.0)
                yu[upp] = np.maximum(yu[upp], 0.0)
                return xu, yu, prim, dual
            add_low = ~low & ~upp & (below > cfg.feasibility_tolerance)
            add_upp = ~low & ~upp & (above > cfg.feasibility_tolerance)
            if not (add_low.any() or add_upp.any() or wrong_low.any() or wrong_upp.any()):
                return None
            low = (low & ~wrong_low) | add_low
            upp = (upp & ~wrong_upp) | add_upp
        return None


def solve_qp_data(qp, warm_x=None, warm_y=None, config: SolverConfig | None = None, solver: ADMMSolver | None = None):
    solver = solver or ADMMSolver(config)
    return solver.solve(qp, warm_x, warm_y)
