"""Exception hierarchy shared by every module."""


class LaneError(ValueError):
    """Base class for domain errors raised by o2slane."""


class DegenerateAngleError(LaneError):
    """Anchor angle too close to 0 or pi for the ray construction."""


class NoOverlapError(LaneError):
    """Two lanes share no commonly valid sampling row."""


class ShapeError(LaneError):
    """Array or sequence has the wrong length or shape."""


class DegenerateScoreError(LaneError):
    """All scores of a positive set are zero, so normalization is undefined."""


class GenerationError(LaneError):
    """Synthetic scene generation failed within its retry budget."""


class SchemaError(LaneError):
    """A scene, weights or report file does not match its schema."""
