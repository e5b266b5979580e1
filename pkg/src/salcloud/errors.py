"""Exception hierarchy shared across the toolkit."""


class SalcloudError(Exception):
    """Base class for all toolkit errors."""


class DataError(SalcloudError):
    """Input data is malformed or violates a precondition."""


class PointOutsideBox(DataError):
    pass


class DegenerateBox(DataError):
    pass


class DegenerateSample(DataError):
    pass


class BadCount(DataError):
    pass


class EmptyPointSet(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class StaleTape(DataError):
    pass


class BadFrequency(DataError):
    pass


class EmptyDataset(DataError):
    pass


class TooFewPoints(DataError):
    pass


class EmptyBatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class MalformedScan(DataError):
    pass


class MalformedLabel(DataError):
    def __init__(self, message, field_index=None):
        super().__init__(message)
        self.field_index = field_index


class MalformedCalib(DataError):
    pass


class SingularCalib(DataError):
    pass


class MalformedRecord(DataError):
    """A line in a line-delimited dump could not be parsed."""

    def __init__(self, message, line_no=None):
        super().__init__(message if line_no is None else f"line {line_no}: {message}")
        self.line_no = line_no


class FrameMismatch(DataError):
    pass


class ConfigError(SalcloudError):
    """Bad command-line flags or run configuration."""


class InvariantViolation(SalcloudError):
    """An internal consistency check failed."""
