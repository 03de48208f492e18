"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit 2,
data problems exit 3, numerical failures (including shape and domain errors
raised by the tensor core) exit 4.
"""


class BioVLMError(Exception):
    """Base class for all package errors."""


class ConfigError(BioVLMError):
    """Invalid or inconsistent configuration (unknown keys, bad ranges)."""


class DataError(BioVLMError):
    """Invalid dataset, bundle, or checkpoint contents."""


class NumericalError(BioVLMError):
    """Non-finite values, failed gradient checks, or degenerate numerics."""


class ShapeError(NumericalError):
    """Operand shapes incompatible with the requested operation."""


class DomainError(NumericalError):
    """Operand values outside an operation's domain (e.g. log of <= 0)."""


class GraphError(NumericalError):
    """Misuse of the autodiff tape (e.g. backward on a consumed graph)."""
