"""Exception hierarchy shared across the package."""


class OCKDError(Exception):
    """Base class for all package errors."""


class ConfigurationError(OCKDError, ValueError):
    """Invalid architecture, hyperparameter or run configuration."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ContractError(OCKDError, ValueError):
    """A caller broke an interface precondition (shapes, routing, provenance)."""


class NumericError(OCKDError, ArithmeticError):
    """Non-finite values reached a numeric routine."""


class MetricError(OCKDError, ValueError):
    """Scores cannot support the requested metric (e.g. a class is absent)."""


class ProtocolViolation(OCKDError):
    """Data hygiene rule of an evaluation protocol was broken."""


class ModelFormatError(OCKDError):
    """Model file has a bad magic number or unsupported version."""


class ModelCorruptionError(ModelFormatError):
    """Model file payload disagrees with its layer table."""
