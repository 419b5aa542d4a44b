"""Exception hierarchy.

Every error raised on purpose by this package derives from
:class:`FisherMaskError`, so callers (the CLI in particular) can map the
families onto exit codes.
"""


class FisherMaskError(Exception):
    """Base class for all package errors."""


class ConfigError(FisherMaskError, ValueError):
    """Invalid configuration value, option, or combination of options."""


class FormatError(FisherMaskError, ValueError):
    """A data file is malformed (bad magic number, header, or cell)."""


class ContractError(FisherMaskError, ValueError):
    """A caller violated an operation's precondition (shapes, labels, sizes)."""


class NumericError(FisherMaskError, ArithmeticError):
    """A matrix that must be invertible is (numerically) singular."""


class ResourceError(FisherMaskError, MemoryError):
    """The requested computation exceeds the configured memory envelope."""
