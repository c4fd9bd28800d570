"""Exception hierarchy shared by every csilab module."""

import numpy as np


class CsilabError(Exception):
    """Base class for all csilab errors."""


class InvalidInputError(CsilabError, ValueError):
    """An argument violates an operation's precondition."""


class NumericFailureError(CsilabError, ArithmeticError):
    """A non-finite value appeared during a computation.

    Training loops attach whatever they had completed as ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SingularMatrixError(CsilabError, np.linalg.LinAlgError):
    """A matrix that must be inverted is (numerically) rank deficient."""


class DegenerateOutputError(CsilabError, ValueError):
    """A refined codeword collapsed to (near) zero norm."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class EvaluationFailedError(CsilabError, RuntimeError):
    """No usable evaluation sample remained."""


class FormatError(CsilabError, ValueError):
    """A binary artifact is malformed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(CsilabError, ValueError):
    """A configuration document failed validation."""

    def __init__(self, path, message):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


class UnknownEnvironmentError(CsilabError, KeyError):
    """Lookup of an environment id absent from a codebook set."""

    def __str__(self):
        return str(self.args[0]) if self.args else "unknown environment"
