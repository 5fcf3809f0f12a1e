"""
Error Types

The common base of the package's exceptions, so the command line can report
any expected failure as one error line.
"""


class AsdError(Exception):
    """Base class for every error raised by the anomalous sound detection pipeline."""
    pass


class ConfigError(AsdError):
    """Exception raised for errors in the configuration."""
    pass
