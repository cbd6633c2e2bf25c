"""Geometric constraint problems on discrete 2D grids.

The package covers the full pipeline: sampling solvable constraint problems,
solving them exactly by topological constraint resolution, training a
recurrent bipartite message-passing model that predicts hidden point
positions, running test-time-scaled inference, and analyzing the learned
embeddings.
"""

from .geometry import Constraint, check_constraint, index_to_point, point_to_index, resolve_constraint
from .solver import DependencyInfo, Problem, emit_solver_log, point_depths, solve

__all__ = [
    "Constraint",
    "DependencyInfo",
    "Problem",
    "check_constraint",
    "emit_solver_log",
    "index_to_point",
    "point_depths",
    "point_to_index",
    "resolve_constraint",
    "solve",
]

__version__ = "0.1.0"
