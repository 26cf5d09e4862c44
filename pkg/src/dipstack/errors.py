"""Exception and warning types shared across the package."""


class DipstackError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DipstackError, ValueError):
    """Invalid configuration, spec or task wiring."""


class ShapeError(DipstackError, ValueError):
    """Array shapes are incompatible."""


class DomainError(DipstackError, ValueError):
    """A value lies outside its admissible range."""


class NumericalAbort(DipstackError, RuntimeError):
    """Optimization produced a non-finite loss.

    ``state`` carries the run state at the moment of failure so callers can
    inspect the loss history and the last good snapshot.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class DipIOError(DipstackError, OSError):
    """A file could not be read or written."""


class IdentifiabilityWarning(UserWarning):
    """The decomposition problem is not identifiable as posed."""


class AmbiguityWarning(UserWarning):
    """A single-mixture decomposition runs without any ambiguity breaker."""
