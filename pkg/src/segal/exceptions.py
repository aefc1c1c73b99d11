class SegalError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(SegalError):
    """Invalid configuration value or degenerate request."""


class InvalidQueryError(SegalError):
    """Annotation query for an unknown or already-annotated sample."""


class LabelAccessError(SegalError):
    """Attempt to read the label of a sample that is still unlabeled."""


class ShapeError(SegalError):
    """Array dimensions do not match the operation's contract."""


class NumericError(SegalError):
    """Non-finite values where finite ones are required."""


class UndefinedMetricError(SegalError):
    """Metric or loss undefined for the given input (e.g. no valid pixels)."""


class AggregationError(SegalError):
    """Ledgers cannot be aggregated (mismatched stage grids or configs)."""
