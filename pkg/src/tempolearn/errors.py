"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto exit codes: ConfigurationError -> 2,
DataError (and subclasses) -> 3, NumericalError -> 4.
"""


class TempoLearnError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(TempoLearnError):
    """Invalid parameters, configs, or incompatible settings."""


class DataError(TempoLearnError):
    """Input data unusable: empty audio, too-short signals, bad values."""


class FormatError(DataError):
    """A file exists but cannot be decoded (bad WAV, bad container)."""


class ContractError(TempoLearnError):
    """Internal contract violated: shape or axis mismatch between stages."""


class CalibrationError(DataError):
    """Calibration impossible, e.g. degenerate (constant) model output."""


class NumericalError(TempoLearnError):
    """Non-finite values encountered where finite math was required."""
