"""Exception types shared across the package.

UsageError means the caller violated a contract (CLI exit code 2); every
other SltError is a runtime/data failure (CLI exit code 1).
"""


class SltError(Exception):
    """Base class for package errors."""


class UsageError(SltError):
    """Caller violated an operation's precondition or the CLI grammar."""


class InfeasibleAlignmentError(SltError):
    """CTC target cannot be aligned: frame count below the minimum path length."""


class OracleError(SltError):
    """A test oracle (finite differences, enumeration) hit an invalid state."""


class ModelDivergenceError(SltError):
    """Training or inference produced non-finite values."""


class ManifestParseError(SltError):
    """Feature manifest is malformed; message names the offending line."""

    def __init__(self, line_no, message):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")
