"""Exception hierarchy. Each class maps to a distinct CLI exit code."""


class TrustBetaError(Exception):
    exit_code = 1


class DomainError(TrustBetaError, ValueError):
    """An argument lies outside the domain of an operation."""

    exit_code = 8


class ConfigError(TrustBetaError):
    exit_code = 3


class SchemaError(TrustBetaError):
    exit_code = 4


class NumericalError(TrustBetaError, ArithmeticError):
    exit_code = 5


class TrainingDivergence(TrustBetaError):
    """Raised when a loss turns non-finite; carries the last good checkpoint."""

    exit_code = 6

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class OptimizationError(TrustBetaError):
    exit_code = 7
