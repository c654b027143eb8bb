"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class XtalkError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 2


class ConfigurationError(XtalkError):
    """Invalid configuration value or an inconsistent parameter combination."""

    exit_code = 1


class DataError(XtalkError):
    """Degenerate or malformed input data (files, manifests, signals)."""

    exit_code = 2


class DimensionError(DataError):
    """Array shapes or lengths inconsistent with what an operation requires."""


class NumericalError(XtalkError):
    """A numerical procedure failed (singular system, undefined ratio)."""

    exit_code = 3
