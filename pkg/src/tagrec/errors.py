"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class TagrecError(Exception):
    exit_code = 1


class ConfigError(TagrecError):
    """Invalid configuration or missing prerequisite artifact."""

    exit_code = 2


class DataError(TagrecError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class NumericalError(TagrecError):
    """Training diverged (non-finite loss or parameters)."""

    exit_code = 4
