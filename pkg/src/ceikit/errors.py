"""Exception hierarchy and warning categories shared across the package.

Exit-code contract for the CLI: data problems (bad rows, missing files,
inconsistent tables) map to exit 1, configuration problems (bad config
values, malformed model setup) map to exit 2.
"""


class CeikitError(Exception):
    """Base class for all package errors."""


class DomainError(CeikitError, ValueError):
    """An input value lies outside an operation's mathematical domain."""


class ConfigurationError(CeikitError):
    """The run configuration is invalid (CLI exit code 2)."""


class DataError(CeikitError):
    """Input data violates a contract (CLI exit code 1)."""


class SchemaError(DataError):
    """A file's header or column layout does not match the documented schema."""


class MissingDataError(DataError):
    """A required day or key is absent from a series."""


class DataQualityWarning(UserWarning):
    """Non-fatal data repair (clamping, flooring, dropped aggregates)."""
