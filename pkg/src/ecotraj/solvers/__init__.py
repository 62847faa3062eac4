from .common import HorizonSolution, InfeasibleProblem, SolveDiagnostics, SolverConfig
from .ipm import solve_nlp
from .qp import solve_qp
from .sqp import solve_sqp

__all__ = ["HorizonSolution", "InfeasibleProblem", "SolveDiagnostics", "SolverConfig", "solve_nlp", "solve_qp", "solve_sqp"]
