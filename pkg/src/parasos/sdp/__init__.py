from .problem import SdpProblem, SdpSolution, MatrixVar, ScalarVar, check_point
from .driver import SolverOptions, solve
from .bisection import BracketError, max_feasible_scalar
from .sdpa import write_sdpa

__all__ = ["SdpProblem", "SdpSolution", "MatrixVar", "ScalarVar", "check_point", "SolverOptions",
           "solve", "BracketError", "max_feasible_scalar", "write_sdpa"]
