"""Optimal control problem transcription and solver."""
from .problem import OcpParams, OcpProblem, build_branching, build_nominal, stage_cost
from .ipm import IpmOptions
from .solver import SolveResult, solve, dump_nlp, warm_start_vector, SOLVED, MAX_ITER, INFEASIBLE

__all__ = ["OcpParams", "OcpProblem", "build_branching", "build_nominal", "stage_cost", "IpmOptions",
           "SolveResult", "solve", "dump_nlp", "warm_start_vector", "SOLVED", "MAX_ITER", "INFEASIBLE"]
