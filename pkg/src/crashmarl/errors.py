"""Exception types shared across the package."""


class CrashMarlError(Exception):
    """Base class for every error raised by crashmarl."""


class ParameterDomainError(CrashMarlError, ValueError):
    """An argument lies outside its documented domain."""


class SamplingFailureError(CrashMarlError, RuntimeError):
    """Rejection sampling ran out of tries."""


class ConfigurationError(CrashMarlError, ValueError):
    """An environment or run configuration cannot be realized."""


class NumericFailureError(CrashMarlError, FloatingPointError):
    """A non-finite value appeared during learning."""


class ConfigParseError(CrashMarlError, ValueError):
    """A config file is malformed; carries the offending key and line."""

    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line is not None:
            where.append(f"line {line}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.key = key
        self.line = line


class CheckpointError(CrashMarlError, ValueError):
    """A checkpoint file is corrupt, truncated, or shape-incompatible."""


class LogParseError(CrashMarlError, ValueError):
    """A CSV log could not be parsed."""

    def __init__(self, message, line=None):
        super().__init__(f"{message} (line {line})" if line is not None else message)
        self.line = line
