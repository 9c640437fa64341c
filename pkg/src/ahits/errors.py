"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so library code raises the most specific
class available rather than a bare ``ValueError``.
"""


class AhitsError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(AhitsError, ValueError):
    """An argument violates a documented precondition."""


class ConfigError(InvalidArgumentError):
    """An experiment configuration is malformed or inconsistent."""


class DivergenceError(AhitsError, ArithmeticError):
    """A rollout or training run produced non-finite values.

    ``where`` names the step, epoch, node or window at which it happened.
    """

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class FormatError(AhitsError, ValueError):
    """A binary file is truncated or carries an unexpected header field."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class ArtifactNotFoundError(AhitsError, FileNotFoundError):
    """A required dataset, checkpoint or manifest is missing on disk."""
