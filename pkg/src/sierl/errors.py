"""Exception hierarchy.

Every error carries a ``category`` (its class name) so the command line front
end can report failures in a machine-readable way.
"""


class SierlError(Exception):
    """Base class for all errors raised by the package."""

    @property
    def category(self) -> str:
        return type(self).__name__


# mesh
class MeshError(SierlError, ValueError):
    pass


class ParseError(MeshError):
    pass


class DegenerateTriangle(MeshError):
    pass


class OpenSurface(MeshError):
    pass


class OrientationError(MeshError):
    pass


# assembly
class NonPositiveFrequency(SierlError, ValueError):
    pass


class CoincidentPoints(SierlError, ValueError):
    pass


class PointOutsideSupport(SierlError, ValueError):
    pass


class OutOfMemory(SierlError, MemoryError):
    pass


# circuit graph
class CircuitError(SierlError, ValueError):
    pass


class EmptyPort(CircuitError):
    pass


class OverlappingPorts(CircuitError):
    pass


class DisconnectedPort(CircuitError):
    pass


class DimensionMismatch(SierlError, ValueError):
    pass


# pfft
class GridTooLarge(SierlError, MemoryError):
    pass


class SingularFit(SierlError, ArithmeticError):
    pass


# solver
class SingularPreconditioner(SierlError, ArithmeticError):
    pass


class NoConvergence(SierlError, ArithmeticError):
    """GMRES hit ``maxiter``; the best iterate is attached."""

    def __init__(self, message, x=None, iterations=0, residuals=()):
        super().__init__(message)
        self.x = x
        self.iterations = iterations
        self.residuals = list(residuals)


# extraction
class SingularY(SierlError, ArithmeticError):
    pass


class InconsistentPotential(SierlError, ArithmeticError):
    pass


class OutOfBudget(SierlError, MemoryError):
    pass


class ConfigError(SierlError, ValueError):
    pass
