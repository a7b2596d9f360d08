"""Exception hierarchy shared across the package."""


class QRobustError(Exception):
    """Base class for all package errors."""


class InvalidArgument(QRobustError, ValueError):
    pass


class NumericDomainError(QRobustError, ArithmeticError):
    pass


class FormatError(QRobustError, ValueError):
    """Malformed IDX or model file. ``offset`` is the byte position, when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EmptyDatasetError(QRobustError, ValueError):
    pass


class RankDeficiencyError(QRobustError, ValueError):
    pass


class EvaluationError(QRobustError, RuntimeError):
    """A fitness or classifier evaluation failed; carries the offending genome."""

    def __init__(self, message: str, genome=None):
        super().__init__(message)
        self.genome = genome


class ConfigError(QRobustError, ValueError):
    pass
