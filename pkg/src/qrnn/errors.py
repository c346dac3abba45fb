class QrnnError(Exception):
    """Base class for all errors raised by this package."""


class CapacityError(QrnnError):
    pass


class LaneError(QrnnError):
    pass


class ImpossibleOutcomeError(QrnnError):
    """A postselection hit an outcome whose probability is below the floor."""

    def __init__(self, message, probability=None):
        super().__init__(message)
        self.probability = probability


class EntangledLanesError(QrnnError):
    pass


class ParameterError(QrnnError):
    pass


class NonFiniteGradientError(QrnnError):
    pass


class CheckpointError(QrnnError):
    pass


class ConfigError(QrnnError):
    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class IdxError(QrnnError):
    pass


class BadMagicError(IdxError):
    pass


class TruncatedFileError(IdxError):
    def __init__(self, message, offset):
        super().__init__(message)
        self.offset = offset


class CountMismatchError(IdxError):
    pass


class EmbeddingFormatError(QrnnError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
