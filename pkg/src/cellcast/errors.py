"""Exception hierarchy shared by every stage of the pipeline."""


class CellcastError(Exception):
    """Base class. ``category`` is the machine-readable tag the CLI prints."""

    category = "error"
    exit_code = 1


class UsageError(CellcastError):
    category = "usage"
    exit_code = 2


class DataError(CellcastError):
    category = "data"
    exit_code = 3


class ParseError(DataError):
    category = "parse"

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class ValidationError(DataError):
    category = "validation"


class MissingInputError(DataError):
    category = "missing inputs"


class ShapeError(DataError):
    category = "shape"


class UndefinedCorrelationError(DataError):
    """Pearson correlation of a constant profile (zero denominator)."""

    category = "undefined correlation"

    def __init__(self, message, group_ids=()):
        self.group_ids = tuple(group_ids)
        super().__init__(message)


class UndefinedMetricError(DataError):
    category = "undefined metric"


class NumericError(CellcastError):
    category = "numeric"
    exit_code = 4
