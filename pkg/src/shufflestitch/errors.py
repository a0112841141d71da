"""Exception hierarchy shared by all shufflestitch modules."""


class ShuffleStitchError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(ShuffleStitchError):
    """Operand shapes are incompatible and not resolvable by broadcasting."""


class ContractError(ShuffleStitchError):
    """A documented precondition was violated by the caller."""


class ConfigError(ShuffleStitchError):
    """An experiment, model, or layer configuration is invalid."""


class FormatError(ShuffleStitchError):
    """A data file does not follow its expected on-disk format."""


class DataError(ShuffleStitchError):
    """Loaded data is unusable (too short, NaNs under the reject policy, ...)."""


class NumericError(ShuffleStitchError):
    """A numeric invariant broke at runtime (NaN loss, NaN priorities)."""
