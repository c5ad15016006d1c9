class DrcnError(Exception):
    """Base class for every error raised by the engine"""


class DimensionError(DrcnError, ValueError):
    """Tensor shapes do not fit the operation"""


class ArgumentError(DrcnError, ValueError):
    """A scalar argument is outside its allowed range"""


class BuildError(DrcnError):
    """The requested architecture cannot be assembled"""


class TrainingError(DrcnError):
    """Training produced a non-finite loss or gradient"""


class DataFormatError(DrcnError):
    """A dataset file does not follow its container format"""


class LengthError(DataFormatError):
    """A dataset file ends before its header says it should"""


class ConfigError(DrcnError):
    """An experiment configuration cannot be resolved"""


class ManifestError(DrcnError):
    """A finished run directory is missing files or holds unexpected ones"""
