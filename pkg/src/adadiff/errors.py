"""Exception hierarchy shared across the package.

Error classes map onto CLI exit codes (see cli.py): configuration and
contract violations exit 2, data/file problems exit 3, numerical
divergence during optimization exits 4.
"""


class AdaDiffError(Exception):
    """Base class for all package errors."""


class ConfigurationError(AdaDiffError):
    """Invalid configuration value or inconsistent config combination."""


class ContractError(AdaDiffError):
    """Caller violated an operation precondition (shapes, ranges)."""


class DataError(AdaDiffError):
    """Dataset or archive on disk is missing, corrupt, or inconsistent."""


class DivergenceError(AdaDiffError):
    """Training or adaptation produced a non-finite loss."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class EvaluationError(AdaDiffError):
    """Metric cannot be evaluated on the given inputs."""
