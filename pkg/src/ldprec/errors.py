"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the valid rating domain or parameter range."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to stabilize."""


class RejectionLimitError(RuntimeError):
    """The rejection sampler exceeded its attempt cap."""


class InsufficientSamplesError(ValueError):
    """Histogram cells hold too few samples for a reliable ratio estimate."""


class DivergenceError(RuntimeError):
    """Training error blew up (learning rate too high)."""


class DataFormatError(ValueError):
    """A rating file could not be parsed.

    ``line`` is the 1-based line number of the offending record, when known.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DuplicateEntryError(DataFormatError):
    pass


class EmptyDatasetError(DataFormatError):
    pass


class ConfigError(ValueError):
    """Invalid experiment or pipeline configuration."""


class PrivacyBoundaryError(AssertionError):
    """True ratings were about to reach service-provider code."""
