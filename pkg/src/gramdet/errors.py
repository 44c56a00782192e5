"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: any ``DataError`` exits with 3, any
``NumericError`` with 4. Usage errors are argparse's native exit 2.
"""


class GramDetError(Exception):
    """Base class for all errors raised by this package."""


class DataError(GramDetError):
    """Malformed, truncated or inconsistent input data."""


class FormatError(DataError):
    """File does not match the expected binary format."""


class VersionError(DataError):
    """File declares an unsupported format version."""


class TruncatedError(DataError):
    """File ended before the declared payload was complete."""


class ShapeMismatchError(DataError):
    """Array or record shapes disagree with the declared layout."""


class EmptyStreamError(DataError):
    """An operation that needs at least one record received none."""


class EmptyClassError(DataError):
    """Scoring was attempted against a class with no fitted records."""


class NumericError(GramDetError):
    """Numeric failure (overflow, non-finite intermediate)."""


class GramOverflowError(NumericError):
    """Accumulation produced non-finite values in a Gram matrix."""

    def __init__(self, order: int, layer_index: int | None = None):
        self.order = order
        self.layer_index = layer_index
        where = f"order {order}"
        if layer_index is not None:
            where = f"layer {layer_index}, {where}"
        super().__init__(f"non-finite values while computing Gram matrix at {where}")
