"""Multipoint stress-flux mixed finite elements for coupled Stokes and Biot flow."""

from .errors import SolverError
from .state import SolutionState
from .timeloop import Problem, TimeStepper, run

__version__ = "0.1.0"
__all__ = ["Problem", "SolutionState", "SolverError", "TimeStepper", "run"]
