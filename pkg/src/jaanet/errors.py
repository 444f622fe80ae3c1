"""Exception types shared across the package."""


class JAANetError(Exception):
    """Base class for package-specific errors."""


class UnsupportedAUError(JAANetError, KeyError):
    """Raised when no center rule exists for a requested AU id."""


class DegenerateGeometryError(JAANetError, ValueError):
    """Raised when landmark geometry collapses (zero scale, coincident eyes)."""


class ShapeError(JAANetError, ValueError):
    """Raised when a tensor does not match the shape a layer or op requires."""


class ManifestError(JAANetError, ValueError):
    """Raised on malformed manifest files; message carries the line number."""


class ZeroOccurrenceRateError(JAANetError, ValueError):
    """Raised when an AU occurrence rate of zero would make 1/r undefined."""


class ConfigError(JAANetError, ValueError):
    """Raised on invalid configuration files or override keys."""
