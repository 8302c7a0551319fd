"""Exception hierarchy."""


class AggrekitError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(AggrekitError, ValueError):
    """An argument is outside its documented domain."""


class DegenerateInputError(AggrekitError, ValueError):
    """Input data carries no usable information (e.g. a fully masked column)."""


class UnsupportedInputError(AggrekitError, ValueError):
    """Input is valid in general but not accepted by this operation."""


class TableParseError(AggrekitError, ValueError):
    """A row of a delimited text file could not be parsed."""

    def __init__(self, path, line_number, message):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


class ConvergenceError(AggrekitError, RuntimeError):
    """An iterative solver could not make progress."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class AmbiguityError(AggrekitError, ValueError):
    """The requested quantity is not identifiable from the data."""


class ConfigError(AggrekitError, ValueError):
    """An experiment configuration is malformed or references unknown keys."""


class ExperimentError(AggrekitError, RuntimeError):
    """A module failed while running a configured experiment; the cause is chained."""
