"""Exception hierarchy. Each class carries the CLI exit code for its category."""


class SlotFilterError(Exception):
    exit_code = 1
    category = "error"


class UsageError(SlotFilterError, ValueError):
    exit_code = 2
    category = "usage"


class DimensionError(SlotFilterError, ValueError):
    exit_code = 2
    category = "dimension"


class NonFiniteError(SlotFilterError, FloatingPointError):
    exit_code = 4
    category = "numeric"


class DivergenceError(NonFiniteError):
    category = "divergence"


class FormatError(SlotFilterError):
    exit_code = 3
    category = "format"


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class LabelRangeError(FormatError):
    pass


class InsufficientDataError(SlotFilterError):
    exit_code = 5
    category = "data"


class UndefinedTestError(SlotFilterError):
    exit_code = 6
    category = "statistics"
