"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or malformed config file."""


class NumericFailure(RuntimeError):
    """Non-finite value encountered where the computation cannot continue."""


class ExportError(OSError):
    """Failure while writing an export artifact (CSV, checkpoint, report)."""
