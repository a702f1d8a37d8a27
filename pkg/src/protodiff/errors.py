"""Exception taxonomy shared across the package.

The CLI maps these to exit codes: ConfigError -> 2, DependencyError -> 3,
NumericError -> 4.
"""


class ProtodiffError(Exception):
    pass


class ShapeError(ProtodiffError):
    """Operand dimensions are incompatible; message names both shapes."""


class NumericError(ProtodiffError):
    """Non-finite values or numerically invalid input."""


class ContractError(ProtodiffError):
    """A documented precondition was violated."""


class BoundsError(ProtodiffError):
    """Index or count outside its valid range."""


class UndefinedMetricError(ProtodiffError):
    """Metric has no defined value for this input (e.g. single-class AUROC)."""


class ConfigError(ProtodiffError):
    """Malformed or inconsistent pipeline configuration."""


class DependencyError(ProtodiffError):
    """A pipeline stage is missing a required upstream artifact."""
