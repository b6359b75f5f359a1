"""Solver and optimality verifier for state-constrained bilinear control of
semilinear heat equations."""

from .errors import ParconError
from .model import ProblemSpec, SpaceTimeGrid, load_problem, loads_problem, make_spec, validate
from .optim import SolveOptions, solve_ocp

__all__ = ["ParconError", "ProblemSpec", "SpaceTimeGrid", "SolveOptions", "load_problem",
           "loads_problem", "make_spec", "solve_ocp", "validate"]
__version__ = "0.1.0"
