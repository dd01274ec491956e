"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: data problems (shape, parse,
parameter, payload) exit 2; numerical failures exit 3.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(ToolkitError):
    """Dimension or shape mismatch between related arrays."""


class ParameterError(ToolkitError):
    """A parameter is outside its documented range."""


class ParseError(ToolkitError):
    """A text input (endmember file, config, header) is malformed."""


class DataError(ToolkitError):
    """A binary payload is truncated, corrupt, or inconsistent."""


class NumericalError(ToolkitError):
    """A numerical procedure failed (NaN loss, non-invertible value)."""


class DegenerateBatchError(NumericalError):
    """A contrastive batch has no usable anchor."""
