"""Very weak space-time Petrov-Galerkin discretization of the wave equation.

Tensor-product B-spline test spaces, the inf-sup optimal trial space, a
Kronecker-structured stiffness operator and three solvers for the resulting
matrix equation (dense oracle, matrix PCG, rational Krylov Galerkin), plus
reference solutions and a Crank-Nicolson baseline.
"""
from .discretization import (
    KronOperator,
    LowRankMatrix,
    WaveProblem,
    assemble_rhs,
    assemble_space_matrices,
    assemble_time_matrices,
    build_stiffness,
    evaluate_solution,
    evaluate_solution_grid,
)
from .galerkin import galerkin_solve
from .kernels import BACKEND
from .mateq import dense_kron_solve, solve_shifted_sylvester, solve_sym_sylvester
from .pcg import PcgConfig, SolveReport, matrix_pcg
from .splines import KnotVector, SplineBasis, assemble_gram_1d

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "KnotVector",
    "KronOperator",
    "LowRankMatrix",
    "PcgConfig",
    "SolveReport",
    "SplineBasis",
    "WaveProblem",
    "assemble_gram_1d",
    "assemble_rhs",
    "assemble_space_matrices",
    "assemble_time_matrices",
    "build_stiffness",
    "dense_kron_solve",
    "evaluate_solution",
    "evaluate_solution_grid",
    "galerkin_solve",
    "matrix_pcg",
    "solve_shifted_sylvester",
    "solve_sym_sylvester",
]
