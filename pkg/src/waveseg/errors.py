"""Exception hierarchy shared across the package."""


class WavesegError(Exception):
    """Base class for all package-specific failures."""


class DimensionError(WavesegError, ValueError):
    """Shape or axis constraint violated; message names the offending axis."""


class ConfigError(WavesegError, ValueError):
    """Invalid configuration detected before any compute starts."""


class UsageError(WavesegError, RuntimeError):
    """API misuse, e.g. backward on a non-scalar or stitching with missing patches."""


class FormatError(WavesegError, IOError):
    """Corrupt or malformed on-disk container."""


class TrainingDiverged(WavesegError, RuntimeError):
    """Non-finite loss; message names the first op that produced NaN/Inf."""
