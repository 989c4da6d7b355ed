"""Dense conic solvers: a standard-form SDP interior-point method, a
log-barrier method for programs with log-det terms, and rank-one extraction."""

from .barrier import (
    Affine, BarrierResult, Concave, ConvexProgram, Function, Layout,
    NegConcave, NegLogDet, Reciprocal, Term, minimize,
)
from .extract import extract_rank_one
from .ipm import INFEASIBLE, NUMERICAL_LIMIT, OPTIMAL, SdpSolution, solve
from .problem import KktResiduals, SdpProblem, inner, kkt_residuals

__all__ = [
    "Affine", "BarrierResult", "Concave", "ConvexProgram", "Function", "Layout",
    "NegConcave", "NegLogDet", "Reciprocal", "Term", "minimize",
    "extract_rank_one",
    "INFEASIBLE", "NUMERICAL_LIMIT", "OPTIMAL", "SdpSolution", "solve",
    "KktResiduals", "SdpProblem", "inner", "kkt_residuals",
]
