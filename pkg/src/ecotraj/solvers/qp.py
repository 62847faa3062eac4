"""Horizon-level wrapper around the ADMM solver."""

from __future__ import annotations

import numpy as np

from .admm import ADMMSolver
from .common import HorizonSolution, SolverConfig, solution_from_x


def solve_qp(problem, warm_start: HorizonSolution | None = None, config: SolverConfig | None = None, solver: ADMMSolver | None = None):
    """Solve a QP or SQP-subproblem horizon problem.

    ``solver`` lets a caller keep one workspace across receding-horizon
    steps; a fresh one is created otherwise.
    """
    if problem.qp is None:
        raise ValueError(f"solve_qp needs a convex problem, got kind {problem.kind!r}")
    solver = solver or ADMMSolver(config)
    if config is not None:
        solver.config = config
    wx = wy = None
    if warm_start is not None:
        if warm_start.x is not None and len(warm_start.x) == problem.qp.n:
            wx = warm_start.x
        else:
            arrays = {k: v for k, v in warm_start.arrays().items() if k in problem.layout.names}
            wx = problem.layout.join(**{k: np.nan_to_num(v) for k, v in arrays.items()})
        if warm_start.y is not None and len(warm_start.y) == problem.qp.m:
            wy = warm_start.y
    x, y, diag = solver.solve(problem.qp, wx, wy)
    sol = solution_from_x(problem, x, y, objective=problem.qp.objective(x) if problem.kind != "QP" else None)
    return sol, diag
