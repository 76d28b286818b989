"""Error hierarchy. ``exit_code`` is what the CLI returns for each category."""


class SPCLError(Exception):
    exit_code = 1


class ConfigurationError(SPCLError, ValueError):
    """Bad configuration: unknown key, out-of-range value, shape mismatch."""

    exit_code = 2


class UsageError(SPCLError, RuntimeError):
    exit_code = 2


class DataError(SPCLError, ValueError):
    """Malformed or inconsistent dataset input."""

    exit_code = 3

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(DataError):
    pass


class EmptyCorpusError(DataError):
    pass


class EvaluationError(SPCLError, ValueError):
    exit_code = 4


class SchedulingError(SPCLError, RuntimeError):
    exit_code = 5


class TrainingError(SPCLError, RuntimeError):
    """Training aborted, e.g. on a non-finite loss. ``diagnostic`` holds the context."""

    exit_code = 5

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic or {}
