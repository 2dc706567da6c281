"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Shape or length of an input does not match what an operation expects."""


class ConfigError(ValueError):
    """Invalid configuration value or malformed config file."""


class ParseError(ValueError):
    """Malformed recording row; carries the 1-based line number."""

    def __init__(self, message, line_number=None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class VocabularyError(ValueError):
    """Unknown room name or mismatched room vocabularies."""


class DomainError(ValueError):
    """Value outside the domain of an operation (bad label id, bad room pair)."""


class PlanError(ValueError):
    """A cross-validation plan cannot be built from the given dataset."""


class ReportError(ValueError):
    """Prediction/ground-truth sets cannot be matched up for a report."""


class OracleError(RuntimeError):
    """A verification oracle hit a non-finite value."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the offending epoch."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message)
