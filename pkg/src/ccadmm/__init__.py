"""Distributed constraint-coupled optimization with consensus-ADMM proxies.

Agents jointly minimize ``sum_i f_i(x_i)`` subject to ``sum_i A_i x_i = b``
by running a primal-dual method whose unavailable network averages are
replaced by proxies tracked with consensus-ADMM. The simulator runs the
algorithm synchronously or under random activation and packet loss.
"""

from .graph import Graph, new_graph, random_connected_graph
from .problem import (
    ConverterLossCost,
    ProblemInstance,
    QuadraticCost,
    default_microgrid,
    make_problem,
    microgrid_instance,
    random_quadratic_instance,
    validate,
)
from .oracle import SaddlePoint, solve_kkt_quadratic, solve_saddle_point
from .network import Params, ScheduleModel, initial_world, run

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "new_graph",
    "random_connected_graph",
    "ConverterLossCost",
    "ProblemInstance",
    "QuadraticCost",
    "default_microgrid",
    "make_problem",
    "microgrid_instance",
    "random_quadratic_instance",
    "validate",
    "SaddlePoint",
    "solve_kkt_quadratic",
    "solve_saddle_point",
    "Params",
    "ScheduleModel",
    "initial_world",
    "run",
]
