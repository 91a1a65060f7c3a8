"""Information-theoretic analysis of elastic bodies as mechanical encoders.

Submodules: ``infotheory`` (kNN entropy and mutual information),
``loads`` (random Legendre traction ensembles), ``halfspace`` (Flamant
superposition responses), ``channel`` (greedy sensor selection and
rate-distortion), ``fem`` (plane-strain P2 encoder for architected blocks),
``psl`` (principal stress lines), ``bayesopt`` (constrained Bayesian
optimization) and ``cli`` (experiment harness).
"""

from .errors import (ConfigError, ConnectivityError, ConvergenceError, DegenerateSourceError,
                     DomainError, InvalidInputError, MechInfoError, RefinementError,
                     StructuralSingularityError)

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ConnectivityError", "ConvergenceError", "DegenerateSourceError",
    "DomainError", "InvalidInputError", "MechInfoError", "RefinementError",
    "StructuralSingularityError", "__version__",
]
