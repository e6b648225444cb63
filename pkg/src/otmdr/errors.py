"""Exception types raised across the package."""


class ShapeMismatchError(ValueError):
    """Parameters, inputs or structures disagree in shape or layout."""


class EmptyBatchError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """A loss or gradient evaluated to inf/nan."""


class IdxFormatError(ValueError):
    pass


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class ConfigError(ValueError):
    """Base for configuration problems; carries the key and 1-based line number."""

    def __init__(self, message, key=None, line=None):
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.key = key
        self.line = line


class UnknownKeyError(ConfigError):
    pass


class MissingKeyError(ConfigError):
    pass


class OutOfRangeError(ConfigError):
    pass


class ConfigSyntaxError(ConfigError):
    pass


class CheckpointError(ValueError):
    pass
