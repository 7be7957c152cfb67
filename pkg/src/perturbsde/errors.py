"""Exception hierarchy for the perturbsde package.

Every error raised by this package derives from :class:`PerturbSDEError`, so
callers can catch one type at the boundary.  Configuration problems,
numerical failures, and contract violations get distinct subclasses because
the command line maps them to different exit codes.
"""

from __future__ import annotations


class PerturbSDEError(Exception):
    """Base class for all errors raised by perturbsde."""


class ConfigError(PerturbSDEError):
    """A run configuration or serialized spec failed schema validation."""


class AlphaOutOfRange(PerturbSDEError):
    """The supremum-feedback weight alpha must satisfy alpha < 1."""


class UnknownPreset(ConfigError):
    """A coefficient preset id is not in the built-in catalog."""


class UnsupportedOrder(PerturbSDEError):
    """A derivative order was requested that the coefficient cannot supply."""


class InconsistentDerivatives(PerturbSDEError):
    """Supplied derivative evaluators disagree with finite differences."""


class DegenerateDiffusion(PerturbSDEError):
    """The diffusion coefficient vanishes or changes sign on the working
    domain, so the unit-diffusion change of variables is unavailable."""


class GridMismatch(PerturbSDEError):
    """Array lengths are inconsistent with the time grid."""


class NonFinite(PerturbSDEError):
    """A simulated quantity left the finite range.

    Attributes
    ----------
    step:
        Index of the first offending time step, when known.
    path_index:
        Index of the offending path, when known.
    """

    def __init__(self, message: str, *, step: int | None = None,
                 path_index: int | None = None):
        super().__init__(message)
        self.step = step
        self.path_index = path_index


class OutOfDomain(PerturbSDEError):
    """A path left the working domain of a tabulated transform."""


class DomainTooSmall(PerturbSDEError):
    """A transform table does not cover the values it is asked to map."""


class IntegrationFailure(PerturbSDEError):
    """A quadrature or root-finding routine failed to converge."""


class EmptySample(PerturbSDEError):
    """A statistical routine received an empty or degenerate sample."""


class VerificationFailure(PerturbSDEError):
    """A verification suite reported at least one failing check."""
