"""Exception types raised across the package."""


class MorboError(Exception):
    """Base class for all package errors."""


class InvalidDataError(MorboError, ValueError):
    """Training data or evaluation results are malformed (e.g. non-finite)."""


class InvalidArgumentError(MorboError, ValueError):
    """An argument violates a documented precondition."""


class InvalidConfigError(MorboError, ValueError):
    """A run configuration is inconsistent or incomplete."""


class UnsupportedError(MorboError, NotImplementedError):
    """The request is valid in principle but not supported (e.g. M > 4)."""


class NumericalError(MorboError, ArithmeticError):
    """A factorization failed even after jitter escalation."""


class LifecycleError(MorboError, RuntimeError):
    """An operation was applied to a trust region in the wrong state."""


class EvaluationError(MorboError, RuntimeError):
    """The black-box evaluation failed irrecoverably."""
