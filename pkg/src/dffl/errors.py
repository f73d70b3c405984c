"""Exception types shared across the package."""


class DfflError(Exception):
    """Base class for all package errors."""


class NonFiniteInput(DfflError, ValueError):
    """An input vector or matrix contains NaN or infinite entries."""


class SolverError(DfflError, RuntimeError):
    """A downstream optimization oracle failed."""


class BisectionNoConverge(SolverError):
    """Bisection hit its iteration cap before reaching the tolerance.

    Attributes:
        residual: absolute constraint residual at the last iterate.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class UnsupportedPair(DfflError, ValueError):
    """No closed-form distance rule exists for this pair of feasible sets."""


class SchemaError(DfflError, ValueError):
    """A CSV file or sidecar does not match the expected layout."""


class EmptyClient(DfflError, ValueError):
    """A client holds no samples."""


class ConfigError(DfflError, ValueError):
    """An experiment, generation or federation config is invalid."""
