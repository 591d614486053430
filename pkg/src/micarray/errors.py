"""Exception types shared across the toolkit.

Every raised error derives from ToolkitError so callers (and the CLI) can
distinguish domain failures from programming errors.
"""


class ToolkitError(Exception):
    """Base class for all toolkit errors."""


# --- signal core ---------------------------------------------------------

class DegenerateSignal(ToolkitError):
    """Signal has (near-)zero energy where energy is required."""


class RateMismatch(ToolkitError):
    """Operands have different sample rates."""


class RatioOutOfRange(ToolkitError):
    """Resampling ratio outside the supported [0.5, 2.0] range."""


class UnsortedKnots(ToolkitError):
    """Interpolation knots are not strictly increasing."""


class TooFewKnots(ToolkitError):
    """Fewer than two interpolation knots."""


class BadFraming(ToolkitError):
    """Invalid STFT window/hop combination."""


# --- acoustic measurement ------------------------------------------------

class BadSpec(ToolkitError):
    """Invalid sweep specification."""


class InsufficientDecay(ToolkitError):
    """Energy decay curve never reaches the requested fit level."""


class NoDistinctPath(ToolkitError):
    """No isolatable dominant peak found in the impulse response."""


# --- direct-path annotator -----------------------------------------------

class HookFailure(ToolkitError):
    """Pre-enhancement hook raised or violated its output contract."""


class NoSharpPeak(ToolkitError):
    """Correlation peak too weak to trust; utterance should be discarded."""


class TooFewValidSegments(ToolkitError):
    """Not enough valid segments left to interpolate a track."""


class TrackCoverageGap(ToolkitError):
    """Delay/gain track does not cover the requested render span."""


# --- fisheye localization ------------------------------------------------

class NoDetection(ToolkitError):
    """No LED-like pixel above the detection floor."""


class OutsideCalibratedField(ToolkitError):
    """Pixel radius outside the camera's calibrated field."""


class GeometryError(ToolkitError):
    """Geometric configuration is impossible or under-determined."""


# --- scene simulator ------------------------------------------------------

class PositionOutsideRoom(ToolkitError):
    """Source or microphone position outside the room."""


class TrajectoryMismatch(ToolkitError):
    """Trajectory duration does not match the source signal."""


class TooShort(ToolkitError):
    """Signal too short for the requested analysis."""


# --- dataset assembly ------------------------------------------------------

class ShapeMismatch(ToolkitError):
    """Operands disagree in channel count or rate."""


class NoiseTooShort(ToolkitError):
    """Noise signal shorter than required."""


class PolicyUnsatisfiable(ToolkitError):
    """Sub-array policy cannot be satisfied by the given geometry."""


class SplitViolation(ToolkitError):
    """Dataset split rules violated (speaker overlap, unmatched pairing)."""

    def __init__(self, message, entries=()):
        super().__init__(message)
        self.entries = list(entries)


# --- pipeline -------------------------------------------------------------

class ConfigInvalid(ToolkitError):
    """Pipeline configuration failed validation."""
