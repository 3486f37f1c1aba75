"""Exception hierarchy.  Each class carries the CLI exit code it maps to."""


class SMGError(Exception):
    exit_code = 1


class ConfigError(SMGError, ValueError):
    exit_code = 2


class ShapeError(ConfigError):
    """Input arrays do not match the configured grid or parameter layout."""


class DegenerateFeatureError(SMGError, ValueError):
    """A zero-norm feature vector was passed where a cosine is required."""

    exit_code = 3


class NumericOverflowError(SMGError, FloatingPointError):
    exit_code = 3


class IntegrityError(SMGError):
    """Persisted artifacts are missing, inconsistent or mutually incomparable."""

    exit_code = 4


class ProtocolError(IntegrityError):
    """A run violated the continual-learning protocol (e.g. trained on the held-out site)."""
