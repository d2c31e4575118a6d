"""Exception hierarchy.

Errors split into two families so the CLI can map them to exit codes:
``ConfigError`` (bad parameters, exit 2) and ``DataError`` (bad or
insufficient data, exit 3).
"""


class StnMklError(Exception):
    """Base class for all package errors."""


class ConfigError(StnMklError, ValueError):
    """Invalid configuration or parameters."""


class DataError(StnMklError, ValueError):
    """Data cannot be read or does not satisfy a precondition."""


# lfp_data
class MissingContact(DataError):
    pass


class WindowOutOfBounds(DataError):
    def __init__(self, message, event=None):
        super().__init__(message)
        self.event = event


class InsufficientQuietSignal(DataError):
    pass


class InvalidSpec(ConfigError):
    pass


class ParseError(DataError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SchemaMismatch(DataError):
    pass


# spectrogram / features
class InvalidParams(ConfigError):
    pass


class InvalidCutoff(ConfigError):
    pass


class UpsampleRequested(ConfigError):
    pass


class DegenerateData(DataError):
    pass


class DimensionMismatch(DataError):
    pass


# kernel_svm / mkl
class SingleClassInput(DataError):
    pass


class NonConvergence(StnMklError, RuntimeError):
    def __init__(self, message, objective=None, gap=None):
        super().__init__(message)
        self.objective = objective
        self.gap = gap


class SizeMismatch(DataError):
    pass


class DegenerateKernel(DataError):
    pass


class BankMismatch(DataError):
    pass


# experiment
class TooFewSamples(DataError):
    pass


class LengthMismatch(DataError):
    pass
