"""Exception hierarchy shared by every grouped_bart module."""


class GBartError(Exception):
    """Root of all errors raised by grouped_bart."""


class InvalidInputError(GBartError, ValueError):
    """Predictor values or shapes the model cannot use."""


class InvalidMoveError(GBartError):
    """A structural edit that does not fit the tree it is applied to."""


class GroupViolationError(InvalidMoveError):
    """A split rule on a variable outside the tree's assigned group."""


class DegenerateResponseError(GBartError):
    """Response vector without two distinct values."""


class InvalidPartitionError(GBartError, ValueError):
    """Groups that are not a disjoint, covering set of nonempty groups."""


class InsufficientDataError(GBartError):
    """Too few observations (or predictors) for the requested operation."""


class InvalidCaseError(GBartError, ValueError):
    """Synthetic generator case outside 1..12."""


class CsvParseError(GBartError):
    """A CSV cell that does not parse as a finite real."""

    def __init__(self, message: str, row: int, column: str):
        super().__init__(message)
        self.row = row
        self.column = column


class SchemaError(GBartError):
    """A CSV file missing a column the caller asked for."""


class InvalidFoldError(GBartError, ValueError):
    """Fold count outside 2..n."""


class ConfigError(GBartError):
    """Bad profile, plan file or override."""


class ModelFormatError(GBartError):
    """Model, partition or trace file that cannot be read back."""


class BenchmarkError(GBartError):
    """A benchmark replication failed; the message names the cell."""
