"""Exception types shared across the package."""


class SolverError(RuntimeError):
    """Base class for failures inside the solver."""


class ConfigError(SolverError, ValueError):
    """Invalid user input: bounds, counts, parameters, config files."""


class GeometryError(SolverError, ValueError):
    """Inconsistent or degenerate mesh geometry."""


class CoefficientError(SolverError, ValueError):
    """Physically inadmissible coefficient (e.g. singular permeability)."""


class AssemblyError(SolverError):
    """Matrix structure violates an assumption (e.g. quadrature mode mismatch)."""


class ReductionError(SolverError):
    """Local elimination failed (singular vertex block)."""


class LinearSolveError(SolverError):
    """Linear solve failed or did not converge."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message if residual is None else f"{message} (residual {residual:.3e})")
        self.residual = residual
