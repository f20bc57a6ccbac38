"""Exception types shared across the package."""


class EvsplatError(Exception):
    """Base class for all package errors."""


class AngleNearPi(EvsplatError):
    """Rotation angle too close to pi for a stable logarithm."""


class OutOfSegment(EvsplatError):
    """Query time outside a trajectory segment's [t_start, t_end]."""


class UnsortedInput(EvsplatError):
    """Event stream is not sorted by timestamp."""


class TooFewEvents(EvsplatError):
    """Chunk does not contain enough events for the requested operation."""


class EmptyDepth(EvsplatError):
    """Depth map has no valid (finite, positive) pixel."""


class DimMismatch(EvsplatError):
    """Two maps or images do not share dimensions."""


class TooSmall(EvsplatError):
    """Image smaller than the SSIM window."""


class ModeMismatch(EvsplatError):
    """Operation requires a different color mode."""


class InsufficientChunks(EvsplatError):
    """Not enough usable chunks to initialize the system."""


class TooFewMatches(EvsplatError):
    """Not enough associated pose pairs for trajectory alignment."""


class ConfigError(EvsplatError):
    """Invalid configuration value or file."""


class DataError(EvsplatError):
    """A data file is missing, truncated, or malformed."""
