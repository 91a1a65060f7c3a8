"""Exception hierarchy shared across the package.

CLI exit codes are attached to the classes so the harness can map any
failure to a stable process status.
"""


class MechInfoError(Exception):
    exit_code = 1


class InvalidInputError(MechInfoError, ValueError):
    exit_code = 2


class DomainError(MechInfoError, ValueError):
    """Argument outside the mathematical domain of an operation."""

    exit_code = 2


class ConfigError(MechInfoError):
    exit_code = 2


class ConvergenceError(MechInfoError):
    """Numerical procedure failed to reach its tolerance.

    The best estimate obtained is kept on ``estimate`` so callers can decide
    whether it is usable.
    """

    exit_code = 3

    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error


class RefinementError(MechInfoError):
    """Mesh too coarse to resolve a geometric feature."""

    exit_code = 3


class ConnectivityError(MechInfoError):
    exit_code = 4


class StructuralSingularityError(MechInfoError):
    """Stiffness matrix is not positive definite (floating region)."""

    exit_code = 4


class DegenerateSourceError(MechInfoError):
    exit_code = 3
