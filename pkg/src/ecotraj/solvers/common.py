from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 4000
    feasibility_tolerance: float = 1e-6
    optimality_tolerance: float = 1e-6
    sqp_step_tolerance: float = 1e-4
    sqp_max_outer_iterations: int = 20
    sqp_damping: bool = True
    time_limit: float | None = None  # ms
    trace: bool = False

    def __post_init__(self):
        if self.feasibility_tolerance <= 0 or self.optimality_tolerance <= 0 or self.sqp_step_tolerance <= 0:
            raise ValueError("tolerances must be > 0")
        if self.max_iterations < 1 or self.sqp_max_outer_iterations < 1:
            raise ValueError("iteration caps must be >= 1")


@dataclass
class SolveDiagnostics:
    status: str  # optimal | max-iter | infeasible | time-limit
    iterations: int = 0
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    wall_time: float = 0.0  # ms
    message: str = ""
    violated_index: int | None = None
    dynamics_residual: float = float("nan")
    trace: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


@dataclass(frozen=True, eq=False)
class HorizonSolution:
    """Planned arrays over the horizon plus solver by-products.

    Problem kinds that do not plan traction/brake leave ``U`` and ``B`` as NaN.
    """

    S: np.ndarray
    V: np.ndarray
    U: np.ndarray
    A: np.ndarray
    B: np.ndarray
    objective: float
    slacks: dict = field(default_factory=dict)
    x: np.ndarray | None = None
    y: np.ndarray | None = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {"S": self.S, "V": self.V, "U": self.U, "A": self.A, "B": self.B}


class InfeasibleProblem(RuntimeError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def solution_from_x(problem, x, y=None, objective=None) -> HorizonSolution:
    arrays = problem.layout.split(x)
    nan = np.full(problem.spec.n_steps + 1, np.nan)
    full = {k: np.array(arrays.get(k, nan), dtype=float) for k in ("S", "V", "U", "A", "B")}
    slacks = {}
    for b in problem.constraints:
        r = b.evaluate(x)
        slacks[b.name] = np.minimum(r - b.lower, b.upper - r)
    if objective is None:
        objective = problem.objective(full)
    return HorizonSolution(**full, objective=float(objective), slacks=slacks, x=np.array(x, dtype=float), y=y)
