"""Exception types raised across the pipeline.

Every error the library raises on bad input or unusable state derives from
PipelineError so callers can catch one base type at process boundaries.
"""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


# geometry
class InvalidDepth(PipelineError):
    """Depth at the requested pixel is zero, negative, or NaN."""


class OutOfBounds(PipelineError):
    """Pixel coordinate outside the image."""


class BehindCamera(PipelineError):
    """Point has non-positive depth in the camera frame."""


class EmptyInput(PipelineError):
    """An operation that needs at least one element received none."""


class SizeMismatch(PipelineError):
    """Voxel sizes (or comparable resolutions) of two operands differ."""


# masks
class FrameMismatch(PipelineError):
    """Masks belong to different frames or image dimensions."""


class ScheduleMismatch(PipelineError):
    """Granularity level count does not match the threshold schedule."""


class Degenerate(PipelineError):
    """Clustering classified every pixel as noise."""


# embeddings
class ZeroNorm(PipelineError):
    """Weighted crop combination cancelled to (near) zero norm."""


class DimMismatch(PipelineError):
    """Embedding dimensions of two operands differ."""


# fusion
class AllInvalidDepth(PipelineError):
    """No pixel of the mask has a valid depth value."""


class AllNoise(PipelineError):
    """3D clustering classified every point as noise."""


# labeling / evaluation
class EmptyGT(PipelineError):
    """Ground-truth instance list is empty."""


class NoAssociations(PipelineError):
    """No ground-truth point has a prediction within the match radius."""


class EmptyResults(PipelineError):
    """Grounding-accuracy aggregation received no results."""


# retrieval
class ParseFailure(PipelineError):
    """Query could not be structured, even after one retry."""


class NoObjects(PipelineError):
    """Candidate mining ran against an empty object map."""


class NeverVisible(PipelineError):
    """Candidate projects into no frame with consistent depth."""


class InsufficientViews(PipelineError):
    """Fewer than two yaw bins have any usable view."""


# gateway
class GatewayError(PipelineError):
    """Model gateway produced a malformed or missing reply."""


class TransportError(GatewayError):
    """HTTP transport failed after the configured retries."""


# dataset io
class FormatError(PipelineError):
    """A file failed to parse; message carries path and byte offset."""

    def __init__(self, path, offset, message):
        super().__init__(f"{path} @ byte {offset}: {message}")
        self.path = str(path)
        self.offset = offset


class CountMismatch(PipelineError):
    """Two archives that must be aligned have different record counts."""


class ManifestError(PipelineError):
    """Scene manifest is malformed or references missing files."""


class ConfigError(PipelineError):
    """Configuration file or value is invalid."""
