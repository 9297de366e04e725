"""Monotone finite-difference solver for elliptic Bellman equations on
smooth bounded domains."""

from .lattice import Domain, Grid, build_grid, classify_deep_interior, disk, distance_to_complement
from .problem import (BellmanProblem, builtin_linear_manufactured, builtin_monge_ampere,
                      builtin_two_control, list_problems, make_problem, validate_problem)
from .solver import GridFunction, SolveReport, build_cache, solve
from .stencil import DirectionSet, canonical_directions, decompose_matrix
from .study import StudyReport, fit_rate, run_convergence_study

__version__ = "0.1.0"
