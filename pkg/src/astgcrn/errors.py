"""Exception hierarchy shared by every module."""


class AstgcrnError(Exception):
    """Base class for all library errors."""


class DimensionError(AstgcrnError, ValueError):
    pass


class ConfigurationError(AstgcrnError, ValueError):
    pass


class ContractError(AstgcrnError, RuntimeError):
    pass


class NumericError(AstgcrnError, FloatingPointError):
    """A NaN or Inf was produced, or training diverged."""


class OracleError(AstgcrnError, RuntimeError):
    pass


class IngestionError(AstgcrnError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateDataError(AstgcrnError, ValueError):
    pass


class CompatibilityError(AstgcrnError, ValueError):
    def __init__(self, message, fields=()):
        super().__init__(message)
        self.fields = tuple(fields)
