"""Exception hierarchy.  ``exit_code`` maps each family onto CLI exit codes."""


class TrustFieldError(Exception):
    exit_code = 1


class ConfigError(TrustFieldError, ValueError):
    exit_code = 2


class DataError(TrustFieldError):
    exit_code = 3


class FormatError(DataError):
    """Input file lacks a required column or has the wrong shape."""


class ParseError(DataError):
    """A cell could not be interpreted; message carries the row number."""


class EmptyDatasetError(DataError):
    pass


class RangeError(DataError, ValueError):
    """A coordinate falls outside the binning domain."""


class NumericalError(TrustFieldError, ArithmeticError):
    exit_code = 4


class DomainError(NumericalError, ValueError):
    """Argument outside a special function's domain (e.g. nu <= 0)."""


class StageError(TrustFieldError):
    """A pipeline stage failed; carries the stage name and the cause's exit code."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code",
                                 DataError.exit_code if isinstance(cause, OSError) else 1)
