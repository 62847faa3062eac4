"""Dense primal active-set QP solver.

A slow, straightforward reference used to cross-check the banded ADMM solver
on small horizons. It shares no code with the ADMM path.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import linprog


def _split_rows(C, l, u):
    C = np.asarray(C, dtype=float)
    eq = np.isfinite(l) & np.isfinite(u) & (l == u)
    A_eq, b_eq = C[eq], np.asarray(u)[eq]
    up = ~eq & np.isfinite(u)
    lo = ~eq & np.isfinite(l)
    G = np.vstack([C[up], -C[lo]])
    h = np.concatenate([np.asarray(u)[up], -np.asarray(l)[lo]])
    return A_eq, b_eq, G, h


def feasible_point(A_eq, b_eq, G, h):
    n = A_eq.shape[1] if A_eq.size else G.shape[1]
    res = linprog(
        np.zeros(n),
        A_ub=G if len(h) else None,
        b_ub=h if len(h) else None,
        A_eq=A_eq if len(b_eq) else None,
        b_eq=b_eq if len(b_eq) else None,
        bounds=[(None, None)] * n,
        method="highs",
    )
    if res.status != 0:
        raise ValueError(f"no feasible point: {res.message}")
    return res.x


def active_set_qp(P, q, C, l, u, x0=None, max_iter=2000, tol=1e-10):
    """Minimise ``1/2 x'Px + q'x`` subject to ``l <= Cx <= u``.

    ``P`` must be positive definite on the null space of the active
    constraints. Returns ``(x, objective, iterations)``.
    """
    P = np.asarray(P.todense() if hasattr(P, "todense") else P, dtype=float)
    C = np.asarray(C.todense() if hasattr(C, "todense") else C, dtype=float)
    q = np.asarray(q, dtype=float)
    A_eq, b_eq, G, h = _split_rows(C, np.asarray(l, float), np.asarray(u, float))
    n = P.shape[0]
    x = feasible_point(A_eq, b_eq, G, h) if x0 is None else np.asarray(x0, dtype=float).copy()

    # start from a linearly independent subset of the constraints active at x
    work: list[int] = []
    slack = h - G @ x
    for i in np.flatnonzero(np.abs(slack) <= 1e-9 * max(1.0, np.max(np.abs(h), initial=1.0))):
        M = np.vstack([A_eq, G[work + [int(i)]]])
        if np.linalg.matrix_rank(M) == M.shape[0]:
            work.append(int(i))

    for it in range(1, max_iter + 1):
        g = P @ x + q
        M = np.vstack([A_eq, G[work]]) if work else A_eq
        k = M.shape[0]
        K = np.block([[P, M.T], [M, np.zeros((k, k))]])
        rhs = np.concatenate([-g, np.zeros(k)])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        p = sol[:n]
        lam = sol[n:]
        if np.max(np.abs(p)) <= tol * max(1.0, np.max(np.abs(x))):
            mu = lam[len(b_eq):]
            if not work or np.min(mu) >= -1e-12:
                return x, float(0.5 * x @ P @ x + q @ x), it
            work.pop(int(np.argmin(mu)))
            continue
        Gp = G @ p
        alpha, block = 1.0, None
        for i in range(len(h)):
            if i in work or Gp[i] <= 1e-14:
                continue
            step = (h[i] - G[i] @ x) / Gp[i]
            if step < alpha:
                alpha, block = max(step, 0.0), i
        x = x + alpha * p
        if block is not None:
            work.append(block)
    raise RuntimeError("active-set QP did not converge")
