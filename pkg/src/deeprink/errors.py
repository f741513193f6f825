"""Exception hierarchy shared across the package.

Everything user-facing derives from DeeprinkError so the CLI can separate
"you gave me bad input" (exit 1) from genuine internal failures (exit 2).
"""


class DeeprinkError(Exception):
    """Base class for all errors raised on bad user input or data."""


class ShapeError(DeeprinkError):
    """Array arguments whose shapes cannot be combined."""


class FormatError(DeeprinkError):
    """Malformed on-disk data (bad magic, truncation, illegal characters)."""


class ConfigError(DeeprinkError):
    """Invalid or unsatisfiable configuration values."""


class ArchitectureError(DeeprinkError):
    """Layer stack that does not chain into a valid network."""


class TrainingError(DeeprinkError):
    """Training run that violated its own contract (e.g. loss did not drop)."""
