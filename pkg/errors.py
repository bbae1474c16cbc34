"""Exception hierarchy for the stereo calibration toolkit."""

from typing import Any, Optional


class StereoCalError(Exception):
    """Base class for every error raised by stereocal."""


class ConfigError(StereoCalError):
    """Invalid configuration or command-line values."""


# Geometry

class GeometryError(StereoCalError):
    """Degenerate projective geometry."""


class PointAtInfinity(GeometryError):
    """Dehomogenization attempted with a (numerically) zero last component."""


class GimbalLock(GeometryError):
    """Pitch at ±π/2: yaw and roll are not separately recoverable.

    Attributes:
        resolved: the angles with roll set to 0 and the rotation folded into yaw
    """

    def __init__(self, message: str, resolved: Optional[Any] = None):
        super().__init__(message)
        self.resolved = resolved


class ParallelRays(GeometryError):
    """The two optical rays do not define a unique closest point."""


# Calibration

class CalibrationError(StereoCalError):
    """A calibration method could not produce parameters."""


class InsufficientCorrespondences(CalibrationError):
    pass


class DegenerateConfiguration(CalibrationError):
    """Correspondences do not constrain the essential matrix (coplanar/collinear/repeated)."""


class AmbiguousCheirality(CalibrationError):
    """No decomposition of E puts a clear majority of points in front of both cameras."""


class NonFiniteCost(CalibrationError):
    """A cost function returned NaN or infinity."""


# Scene / evaluation

class SceneError(StereoCalError):
    pass


class PlacementExhausted(SceneError):
    """No valid target placement found within the sampling budget."""


class EvaluationError(StereoCalError):
    pass


class MissingTarget(EvaluationError):
    """A validation image lacks a required target detection."""


# File formats

class FormatError(StereoCalError):
    pass


class ParseError(FormatError):
    """Malformed line in a stereocal file.

    Attributes:
        line_number: 1-based line of the offending input
    """

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class SchemaError(FormatError):
    """Well-formed file whose content violates the schema."""


class VersionError(FormatError):
    pass


class ConsistencyError(FormatError):
    """Stored derived values disagree with the stored angles."""


class FailureThresholdExceeded(StereoCalError):
    """Too many evaluation runs failed to calibrate."""
