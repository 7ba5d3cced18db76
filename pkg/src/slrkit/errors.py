"""Exception types shared across the toolkit."""


class SlrkitError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(SlrkitError):
    """An operand's dimensions do not match what the operation expects."""


class DivisionError(SlrkitError):
    """A region split is degenerate or leaves a region smaller than the kernel."""


class LengthError(SlrkitError):
    """A sequence is too short for the requested temporal operation."""


class InfeasibleTargetError(SlrkitError):
    """The target sequence cannot be aligned to the given number of frames."""


class CannotDensifyError(SlrkitError):
    """A framewise prediction contains no non-blank label to densify from."""


class ContractViolationError(SlrkitError):
    """Inputs violate a precondition (e.g. mismatched sequence lengths)."""


class UndefinedWerError(SlrkitError):
    """WER is undefined because the reference sequence is empty."""


class FormatError(SlrkitError):
    """A file's bytes do not follow the expected container format."""


class ConfigError(SlrkitError):
    """A configuration file contains unknown keys or unparseable values."""


class DataError(SlrkitError):
    """A corpus or checkpoint directory is missing or inconsistent."""
