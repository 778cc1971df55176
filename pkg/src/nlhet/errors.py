"""Exception types raised by the package."""


class InvalidArgument(ValueError):
    pass


class UnsupportedOperation(ValueError):
    """Operation not defined for the requested family (e.g. CML with Laplace noise)."""


class SingularSystemError(InvalidArgument):
    """Rank-deficient design in a least-squares solve (e.g. a constant series)."""


class SingularInformationError(ValueError):
    """An information/Hessian block could not be inverted."""


class SimulationDiverged(RuntimeError):
    """A simulated path left the divergence bound."""
