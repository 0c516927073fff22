"""Exception types shared across the toolkit."""


class FlowsegError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(FlowsegError, ValueError):
    """Operands have incompatible dimensions."""


class ParameterError(FlowsegError, ValueError):
    """A parameter or input value lies outside its documented domain."""


class EmptyMaskError(FlowsegError, ValueError):
    """An operation that needs at least one set pixel received an empty mask."""


class FormatError(FlowsegError, ValueError):
    """A byte stream does not follow the expected file format."""


class LengthError(FormatError):
    """A byte stream is truncated or has trailing bytes for its declared size."""


class MissingInputError(FlowsegError, FileNotFoundError):
    """A required input file is absent or unreadable."""
