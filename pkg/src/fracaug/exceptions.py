"""Exception hierarchy shared by every fracaug module."""


class FracAugError(Exception):
    """Base class for all errors raised by fracaug."""


class FormatError(FracAugError):
    """A dataset file is missing or malformed."""


class IntegrityError(FracAugError):
    """Dataset files are individually well formed but inconsistent."""


class UnsupportedDatasetError(FracAugError):
    """The dataset is not a binary graph classification problem."""


class SplitInfeasibleError(FracAugError):
    """A class is too small to contribute to train, val and test."""


class ContractError(FracAugError, ValueError):
    """An argument violates a documented precondition."""


class DomainError(FracAugError, ValueError):
    """A numeric argument lies outside the function's domain."""


class OutOfRangeError(DomainError):
    """An eigenvalue lies outside an approximation interval."""


class EmptyGraphError(FracAugError, ValueError):
    """An operation requires at least one node."""


class NumericError(FracAugError, ArithmeticError):
    """A numerical routine failed (non-convergence, non-finite values)."""


class UndefinedMetricError(FracAugError, ValueError):
    """A metric is undefined for the supplied labels."""


class ConfigError(FracAugError, ValueError):
    """Invalid or unknown configuration key/value."""
