"""Transfer identification: exact L1 program, relaxed L2 program with rounding,
and an exhaustive oracle for tiny instances."""
from .brute import MAX_BRUTE_SEGMENTS, solve_brute
from .common import (InstanceTooLarge, SolverError, SolverReport, assignment_rates,
                     objective_l1, objective_l2)
from .ip import solve_ip
from .qcp import QCPConvergenceError, solve_qcp
from .rounding import round_relaxation

__all__ = ["MAX_BRUTE_SEGMENTS", "InstanceTooLarge", "QCPConvergenceError", "SolverError",
           "SolverReport", "assignment_rates", "objective_l1", "objective_l2",
           "round_relaxation", "solve_brute", "solve_ip", "solve_qcp"]
