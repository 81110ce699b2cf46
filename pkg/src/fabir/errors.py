"""Exception types shared across the package."""


class FabirError(Exception):
    """Base class for package errors."""


class DimensionError(FabirError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigError(FabirError, ValueError):
    """An invalid configuration value or combination."""


class ContractError(FabirError, ValueError):
    """A precondition of an operation was violated."""


class ParseError(FabirError, ValueError):
    """An input file does not follow its expected format."""


class DataError(FabirError, ValueError):
    """A data record is inconsistent (e.g. a gold index outside the passage)."""


class CheckpointError(FabirError):
    """A checkpoint is unreadable or does not match the model it is loaded into."""


class DivergenceError(FabirError):
    """Training produced a non-finite loss."""

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good
