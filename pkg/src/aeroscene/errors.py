"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all domain errors raised by this package."""


class ParseError(PipelineError):
    """Malformed input text. Carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TruncationError(ParseError):
    """Input body is shorter than its header declares."""


class CrossReferenceError(PipelineError):
    """An id points at a camera, intrinsics entry or image that does not exist."""


class EmptyModelError(PipelineError):
    """A scene model with no images."""


class EmptyInputError(PipelineError):
    """An operation that requires data received none."""


class InsufficientViewsError(PipelineError):
    """Fewer candidate cameras than the requested cluster size."""


class EmptyResultError(PipelineError):
    """A clustering pass produced no complete cluster."""


class DegenerateFitError(PipelineError):
    """Plane fit attempted on collinear or near-vertical data."""


class PlacementError(PipelineError):
    """Could not place the requested number of non-overlapping buildings."""


class WriteError(PipelineError):
    """Failed to write an output file."""
